"""Command-line entry point: ``conformal-stability <command> [options]``.

Commands: stability, coverage, bounds, figure1, predict. Every command
accepts ``--config FILE.toml``; keys in the file (top level or under a table
named after the command) use the long option names with underscores, and
explicit flags override them.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import conformal
from .distributions import make_distribution
from .experiments import (
    STABILITY_COLUMNS,
    ExperimentConfig,
    curve_rows,
    miscoverage_distribution,
    run_figure1,
    write_coverage,
    split_sizes,
)
from .guarantees import BoundInputs, evaluate_bound
from .io import read_dataset_csv, write_rows
from .regressors import make_algorithm
from .stability import StabilityVariant, stability_curve

log = logging.getLogger("conformal_stability")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    return [float(t) for t in str(text).split(",") if t.strip()]


# default values per command; argparse defaults stay None so the config
# file can fill anything the command line leaves out
DEFAULTS = {
    "stability": dict(
        alg="knn:k=20", dist="sine:d=40", variant="out", n=500, m_list="1,5,10,25",
        trials=1000, seed=0, out="stability.csv", workers=1,
    ),
    "coverage": dict(
        method="split", alg="ridge:lam=1", dist="sine:d=5", alpha=0.2, gamma=0.0,
        n=100, m=50, n_test=2000, trials=100, seed=0, delta=0.1, out="coverage.csv",
        compare_bound=False, tail_thresholds="", grid_count=1001, stability_trials=1000,
        workers=1,
    ),
    "bounds": dict(
        theorem="jplus", alpha=0.1, delta=0.05, n=10000, m=10000, beta=None, gamma=None,
        b_dens=None, epsilon=None, nu=None,
    ),
    "figure1": dict(
        n=500, d=40, trials=1000, m_max=25, seed=0, outdir="figure1",
        algorithms="knn,ridge,tree,subbag", workers=1,
    ),
    "predict": dict(
        train_file=None, method="jplus", alg="ridge:lam=1", alpha=0.1, gamma=0.0, x=None,
        grid_count=2001, out=None,
    ),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conformal-stability", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="TOML file with option values")
        return sp

    s = add("stability", "estimate a stability curve and its bounds")
    s.add_argument("--alg")
    s.add_argument("--dist")
    s.add_argument("--variant", help="out, in, out/swap or in/swap")
    s.add_argument("--n", type=int)
    s.add_argument("--m-list", help="comma-separated ascending m values")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)

    c = add("coverage", "distribution of training-conditional miscoverage")
    c.add_argument("--method", choices=["split", "jplus", "full_cp"])
    c.add_argument("--alg")
    c.add_argument("--dist")
    c.add_argument("--alpha", type=float)
    c.add_argument("--gamma", type=float)
    c.add_argument("--n", type=int)
    c.add_argument("--m", type=int, help="m used by the theorem comparison")
    c.add_argument("--n-test", type=int)
    c.add_argument("--trials", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--delta", type=float)
    c.add_argument("--out")
    c.add_argument("--compare-bound", action="store_true", default=None)
    c.add_argument("--tail-thresholds")
    c.add_argument("--grid-count", type=int)
    c.add_argument("--stability-trials", type=int)
    c.add_argument("--workers", type=int)

    b = add("bounds", "evaluate a training-conditional coverage bound")
    b.add_argument("--theorem", help="split, jplus, jplus_uninflated, full_conformal, *_alt")
    for flag in ("alpha", "delta", "beta", "gamma", "b-dens", "epsilon", "nu"):
        b.add_argument(f"--{flag}", type=float)
    b.add_argument("--n", type=int)
    b.add_argument("--m", type=int)

    f = add("figure1", "stability curves of the four learners vs the composite bound")
    f.add_argument("--n", type=int)
    f.add_argument("--d", type=int)
    f.add_argument("--trials", type=int)
    f.add_argument("--m-max", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--outdir")
    f.add_argument("--algorithms")
    f.add_argument("--workers", type=int)

    r = add("predict", "prediction set at one query point from a CSV training file")
    r.add_argument("--train-file")
    r.add_argument("--method", choices=["split", "jplus", "full_cp"])
    r.add_argument("--alg")
    r.add_argument("--alpha", type=float)
    r.add_argument("--gamma", type=float)
    r.add_argument("--x", help="comma-separated feature values")
    r.add_argument("--grid-count", type=int)
    r.add_argument("--out")
    return p


def load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    values = dict(DEFAULTS[args.command])
    if args.config:
        doc = load_toml(args.config)
        table = doc.get(args.command, {})
        flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        for k, v in {**flat, **table}.items():
            key = k.replace("-", "_")
            if key not in values:
                raise ConfigError(f"unknown key {k!r} for command {args.command}")
            values[key] = v
    for k, v in vars(args).items():
        if k in values and v is not None:
            values[k] = v
    return values


def _check_finite(*vals):
    for v in vals:
        if v is not None and not math.isfinite(v):
            raise FloatingPointError(f"non-finite result {v!r}")


def cmd_stability(v: dict) -> None:
    alg, dist = make_algorithm(v["alg"]), make_distribution(v["dist"])
    curve = stability_curve(
        alg, dist, StabilityVariant.parse(v["variant"]), int(v["n"]),
        _int_list(v["m_list"]), int(v["trials"]), int(v["seed"]), int(v["workers"]),
    )
    rows = curve_rows(curve, alg, dist)
    for row in rows:
        _check_finite(row[4], row[6])
    write_rows(v["out"], STABILITY_COLUMNS, rows)
    log.info("wrote %s", v["out"])


def cmd_coverage(v: dict) -> None:
    cfg = ExperimentConfig(
        method=v["method"], alg=v["alg"], dist=v["dist"], alpha=float(v["alpha"]),
        gamma=float(v["gamma"]), n=int(v["n"]), m=int(v["m"]), trials=int(v["trials"]),
        n_test=int(v["n_test"]), seed=int(v["seed"]), delta=float(v["delta"]),
        grid_count=int(v["grid_count"]), stability_trials=int(v["stability_trials"]),
        tail_thresholds=tuple(_float_list(v["tail_thresholds"])),
        compare_bound=bool(v["compare_bound"]), workers=int(v["workers"]), out=v["out"],
    )
    result = miscoverage_distribution(cfg)
    _check_finite(result.summary["mean"])
    paths = write_coverage(result, cfg.out)
    log.info("wrote %s and %s", *paths)


def cmd_bounds(v: dict) -> None:
    keys = ("beta", "gamma", "b_dens", "epsilon", "nu")
    inputs = BoundInputs(
        alpha=float(v["alpha"]), delta=float(v["delta"]), n=int(v["n"]), m=int(v["m"]),
        **{k: (None if v[k] is None else float(v[k])) for k in keys},
    )
    report = evaluate_bound(v["theorem"], inputs)
    _check_finite(report.threshold, report.failure_prob)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_figure1(v: dict) -> None:
    algs = [a.strip() for a in str(v["algorithms"]).split(",") if a.strip()]
    run_figure1(
        int(v["n"]), int(v["d"]), int(v["trials"]), int(v["m_max"]), int(v["seed"]),
        algs, v["outdir"], int(v["workers"]),
    )
    log.info("wrote figure-1 curves to %s", v["outdir"])


def cmd_predict(v: dict) -> None:
    if not v["train_file"] or v["x"] is None:
        raise ConfigError("predict needs --train-file and --x")
    train = read_dataset_csv(v["train_file"])
    x = np.array(_float_list(v["x"]))
    if x.size != train.d:
        raise ConfigError(f"--x has {x.size} values but the data has d={train.d}")
    alg = make_algorithm(v["alg"])
    alpha, gamma = float(v["alpha"]), float(v["gamma"])
    method = v["method"]
    if method == "split":
        n0, _ = split_sizes(train.n)
        ps = conformal.split_conformal(train[:n0], train[n0:], alg, alpha, x)
    elif method == "jplus":
        ps = conformal.jackknife_plus(train, alg, alpha, gamma, x)
    else:
        grid = conformal.GridSpec.default_for(train.y, int(v["grid_count"]))
        ps = conformal.full_conformal(train, alg, alpha, gamma, x, grid)
    text = json.dumps(ps.to_dict(), indent=2, sort_keys=True) + "\n"
    if v["out"]:
        with open(v["out"], "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "stability": cmd_stability,
    "coverage": cmd_coverage,
    "bounds": cmd_bounds,
    "figure1": cmd_figure1,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        values = resolve(args)
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            COMMANDS[args.command](values)
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
