"""Training-conditional miscoverage experiments and the stability-curve study.

The conditional miscoverage alpha_P(D_n) of a fitted prediction rule is
estimated by its empirical noncoverage on ``n_test`` fresh points. Repeating
this over independent training sets gives the distribution that the
training-conditional bounds control.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from functools import partial
from typing import Callable

import numpy as np

from .conformal import (
    GridSpec,
    PredictionSet,
    fit_jackknife_plus,
    fit_split_conformal,
    full_conformal_membership,
    runs_to_set,
)
from .core import Dataset, RegressionAlgorithm, derive_stream, run_trials
from .distributions import DistributionSpec, make_distribution
from .guarantees import (
    BoundInputs,
    BoundReport,
    bound_full_conformal,
    bound_jplus_inflated,
    bound_jplus_uninflated,
    bound_split_conformal,
)
from .io import write_rows
from .regressors import make_algorithm
from .stability import IN, OUT, StabilityCurve, estimate_stability, stability_curve, theory_bound

METHODS = ("split", "jplus", "full_cp")


@dataclass(frozen=True)
class MiscoverageSample:
    trial: int
    alpha_hat: float
    method: str
    alpha: float
    gamma: float
    n: int
    n_test: int


def child_seed(seed: int, tag: int) -> int:
    """A root seed for an auxiliary computation, independent of ``seed``'s trials."""
    ss = np.random.SeedSequence(seed % 2**64, spawn_key=(2**32 + tag,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- prediction rules -------------------------------------------------------


def split_sizes(n: int) -> tuple[int, int]:
    """(n0, n1): first half trains, the rest calibrates."""
    n0 = n // 2
    return n0, n - n0


def fit_rule(
    method: str,
    train: Dataset,
    alg: RegressionAlgorithm,
    alpha: float,
    gamma: float = 0.0,
    grid_count: int = 1001,
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Fit a prediction rule on ``train``; returns ``covers(X, y) -> bool array``."""
    if method == "split":
        if train.n < 2:
            raise ValueError("split conformal needs n >= 2")
        n0, _ = split_sizes(train.n)
        rule = fit_split_conformal(train[:n0], train[n0:], alg, alpha)
        if gamma:
            rule = replace(rule, margin=rule.margin + gamma)

        def covers(X, y):
            lo, hi = rule.predict_interval(X)
            return (lo <= y) & (y <= hi)

        return covers
    if method == "jplus":
        rule = fit_jackknife_plus(train, alg, alpha, gamma)

        def covers(X, y):
            lo, hi = rule.predict_interval(X)
            return (lo <= y) & (y <= hi)

        return covers
    if method == "full_cp":
        grid = GridSpec.default_for(train.y, grid_count)
        values = grid.values()

        def covers(X, y):
            X = np.asarray(X, dtype=float).reshape(-1, train.d)
            out = np.empty(X.shape[0], dtype=bool)
            for i in range(X.shape[0]):
                mask = full_conformal_membership(train, alg, alpha, gamma, X[i], values)
                out[i] = runs_to_set(mask, grid).contains(y[i])
            return out

        return covers
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def empirical_miscoverage(sets: list[PredictionSet], y) -> float:
    """Fraction of responses not covered by their prediction sets."""
    y = np.asarray(y, dtype=float)
    if len(sets) != len(y):
        raise ValueError("one prediction set per response required")
    if not len(y):
        raise ValueError("empty test set")
    return float(np.mean([yi not in s for s, yi in zip(sets, y)]))


def estimate_miscoverage(
    method: str,
    alg: RegressionAlgorithm,
    dist: DistributionSpec,
    alpha: float,
    gamma: float,
    n: int,
    n_test: int,
    rng,
    grid_count: int = 1001,
    trial: int = 0,
) -> MiscoverageSample:
    """Draw D_n and n_test fresh points from ``rng``; report the noncoverage rate."""
    if n < 1 or n_test < 1:
        raise ValueError("n and n_test must be >= 1")
    train = dist.sample(n, rng)
    test = dist.sample(n_test, rng)
    covers = fit_rule(method, train, alg, alpha, gamma, grid_count)
    alpha_hat = 1.0 - float(np.mean(covers(test.X, test.y)))
    return MiscoverageSample(trial, alpha_hat, method, alpha, gamma, n, n_test)


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "split"
    alg: str = "ridge:lam=1"
    dist: str = "sine:d=5"
    alpha: float = 0.2
    gamma: float = 0.0
    n: int = 100
    m: int = 50
    trials: int = 100
    n_test: int = 2000
    seed: int = 0
    delta: float = 0.1
    grid_count: int = 1001
    stability_trials: int = 1000
    tail_thresholds: tuple[float, ...] = ()
    compare_bound: bool = False
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.method == "jplus" and self.n < 2:
            raise ValueError("jackknife+ needs n >= 2")
        object.__setattr__(self, "tail_thresholds", tuple(float(t) for t in self.tail_thresholds))
        # fail early on malformed component strings
        self.algorithm
        self.distribution

    @property
    def algorithm(self) -> RegressionAlgorithm:
        return make_algorithm(self.alg)

    @property
    def distribution(self) -> DistributionSpec:
        return make_distribution(self.dist)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


def _coverage_trial(t, method, alg, dist, alpha, gamma, n, n_test, seed, grid_count):
    return estimate_miscoverage(
        method, alg, dist, alpha, gamma, n, n_test, derive_stream(seed, t), grid_count, t
    )


@dataclass
class CoverageResult:
    samples: list[MiscoverageSample]
    summary: dict
    bound: BoundReport | None = None
    beta_hat: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def alpha_hats(self) -> np.ndarray:
        return np.array([s.alpha_hat for s in self.samples])


def summarize(alpha_hats, thresholds=()) -> dict:
    a = np.asarray(alpha_hats, dtype=float)
    t = len(a)
    return {
        "trials": t,
        "mean": float(np.mean(a)),
        "stderr": float(np.std(a, ddof=1) / math.sqrt(t)) if t > 1 else math.inf,
        "q50": float(np.quantile(a, 0.5)),
        "q90": float(np.quantile(a, 0.9)),
        "q99": float(np.quantile(a, 0.99)),
        "tail_freqs": {repr(float(th)): float(np.mean(a > th)) for th in thresholds},
    }


def theorem_bound(cfg: ExperimentConfig) -> tuple[BoundReport, float | None]:
    """The training-conditional bound matching ``cfg``'s method.

    Stability enters at the shifted indices the bounds require:
    beta_out(m, n-1) for jackknife+, beta_in(m-1, n+1) for full conformal.
    Returns the report and the stability estimate fed into it.
    """
    if cfg.method == "split":
        _, n1 = split_sizes(cfg.n)
        return bound_split_conformal(cfg.alpha, cfg.delta, n1), None
    alg, dist = cfg.algorithm, cfg.distribution
    sseed = child_seed(cfg.seed, 1)
    if cfg.method == "jplus":
        beta = estimate_stability(alg, dist, OUT, cfg.n - 1, cfg.m, cfg.stability_trials, sseed, cfg.workers).mean
        if cfg.gamma > 0:
            inputs = BoundInputs(cfg.alpha, cfg.delta, cfg.n, cfg.m, beta=beta, gamma=cfg.gamma)
            return bound_jplus_inflated(inputs), beta
        if dist.B_dens is None:
            raise ValueError("uninflated jackknife+ bound needs a distribution with B_dens")
        inputs = BoundInputs(cfg.alpha, cfg.delta, cfg.n, cfg.m, beta=beta, b_dens=dist.B_dens)
        return bound_jplus_uninflated(inputs), beta
    if not cfg.gamma > 0:
        raise ValueError("the full conformal bound needs gamma > 0")
    beta = estimate_stability(alg, dist, IN, cfg.n + 1, cfg.m - 1, cfg.stability_trials, sseed, cfg.workers).mean
    inputs = BoundInputs(cfg.alpha, cfg.delta, cfg.n, cfg.m, beta=beta, gamma=cfg.gamma)
    return bound_full_conformal(inputs), beta


def miscoverage_distribution(cfg: ExperimentConfig) -> CoverageResult:
    """alpha_hat for trials 0..trials-1 (trial t uses stream (seed, t)) plus a summary.

    With ``compare_bound`` the summary also carries the theorem's threshold
    and failure probability and the empirical frequency of
    alpha_hat >= threshold.
    """
    fn = partial(
        _coverage_trial,
        method=cfg.method,
        alg=cfg.algorithm,
        dist=cfg.distribution,
        alpha=cfg.alpha,
        gamma=cfg.gamma,
        n=cfg.n,
        n_test=cfg.n_test,
        seed=cfg.seed,
        grid_count=cfg.grid_count,
    )
    samples = run_trials(fn, cfg.trials, cfg.workers)
    a = np.array([s.alpha_hat for s in samples])
    summary = summarize(a, cfg.tail_thresholds)
    result = CoverageResult(samples, summary)
    summary["bound_threshold"] = None
    summary["bound_failure_prob"] = None
    if cfg.compare_bound:
        report, beta = theorem_bound(cfg)
        freq = float(np.mean(a >= report.threshold))
        summary.update(
            bound_threshold=report.threshold,
            bound_failure_prob=report.failure_prob,
            bound_theorem=report.theorem,
            bound_vacuous=report.vacuous,
            bound_beta_hat=beta,
            bound_tail_freq=freq,
            bound_tail_stderr=math.sqrt(max(freq * (1 - freq), 0.0) / len(a)),
        )
        result.bound, result.beta_hat = report, beta
    return result


def write_coverage(result: CoverageResult, path: str) -> tuple[str, str]:
    """Write ``trial,alpha_hat`` CSV and the ``<stem>.summary.json`` sidecar."""
    import json

    write_rows(path, ["trial", "alpha_hat"], [(s.trial, s.alpha_hat) for s in result.samples])
    stem = path[:-4] if path.endswith(".csv") else path
    side = stem + ".summary.json"
    with open(side, "w") as fh:
        json.dump(_jsonable(result.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path, side


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
    return obj


# -- stability curves -------------------------------------------------------

STABILITY_COLUMNS = [
    "variant", "n", "m", "trials", "beta_hat", "stderr",
    "lemma_bound", "theory_bound", "theory_bound_kind",
]


def curve_rows(curve: StabilityCurve, alg, dist, with_lemma_stderr=False):
    rows = []
    for i, est in enumerate(curve.estimates):
        tb, kind = theory_bound(alg, dist, est.m, est.n)
        row = [str(est.variant), est.n, est.m, est.trials, est.mean, est.stderr,
               curve.lemma[i], tb, kind]
        if with_lemma_stderr:
            row.append(curve.lemma_stderr[i])
        rows.append(row)
    return rows


FIGURE1_ALGORITHMS = {
    "knn": "knn:k=20",
    "ridge": "ridge:lam=0.01",
    "tree": "tree:max_depth=8",
    "subbag": "subbag:N={half},B=20,max_depth=8",
}


def run_figure1(
    n: int = 500,
    d: int = 40,
    trials: int = 1000,
    m_max: int = 25,
    seed: int = 0,
    algorithms=("knn", "ridge", "tree", "subbag"),
    outdir: str | None = None,
    workers: int = 1,
) -> dict[str, StabilityCurve]:
    """Out-of-sample beta_{m,n} and its composite bound for m = 1..m_max.

    Writes ``figure1_<alg>.csv`` per algorithm into ``outdir`` when given.
    The subbagged tree stands in for a random forest (bags of size n/2
    without replacement, 20 bags).
    """
    dist = make_distribution(f"sine:d={d}")
    curves = {}
    for name in algorithms:
        if name not in FIGURE1_ALGORITHMS:
            raise ValueError(f"unknown figure-1 algorithm {name!r}")
        alg = make_algorithm(FIGURE1_ALGORITHMS[name].format(half=max(1, n // 2)))
        curve = stability_curve(alg, dist, OUT, n, range(1, m_max + 1), trials, seed, workers)
        curves[name] = curve
        if outdir is not None:
            os.makedirs(outdir, exist_ok=True)
            write_rows(
                os.path.join(outdir, f"figure1_{name}.csv"),
                STABILITY_COLUMNS + ["lemma_stderr"],
                curve_rows(curve, alg, dist, with_lemma_stderr=True),
            )
    return curves


__all__ = [
    "ExperimentConfig",
    "MiscoverageSample",
    "CoverageResult",
    "estimate_miscoverage",
    "empirical_miscoverage",
    "fit_rule",
    "miscoverage_distribution",
    "run_figure1",
    "theorem_bound",
    "write_coverage",
]
