"""Monte Carlo estimates of m-stability and closed-form stability bounds.

Four functionals are estimated, all of the form E|mu(X_eval) - mu'(X_eval)|:

* ``out/add_remove``: mu fit on n points, mu' on the same n plus m more,
  evaluated at a fresh point.
* ``in/add_remove``: as above, evaluated at the first training point X_1.
* ``out/swap``: mu' fit on the n points with the last m replaced by fresh
  draws, evaluated at a fresh point.
* ``in/swap``: as above, evaluated at X_1 (requires m < n).

Trial t draws all of its data from ``derive_stream(seed, t)``, so estimates
are reproducible and do not depend on the number of worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .core import Dataset, RegressionAlgorithm, derive_stream, run_trials
from .regressors import (
    ClippedRegressor,
    KNNRegressor,
    RidgeRegressor,
    SubbagRegressor,
)


@dataclass(frozen=True)
class StabilityVariant:
    side: str = "out"
    perturbation: str = "add_remove"

    def __post_init__(self):
        if self.side not in ("out", "in"):
            raise ValueError("side must be 'out' or 'in'")
        if self.perturbation not in ("add_remove", "swap"):
            raise ValueError("perturbation must be 'add_remove' or 'swap'")

    def __str__(self):
        return f"{self.side}/{self.perturbation}"

    @classmethod
    def parse(cls, text: str) -> "StabilityVariant":
        """Accepts ``out``, ``in``, ``out/swap``, ``in-add_remove`` and similar."""
        side, _, pert = text.replace("-", "/").partition("/")
        return cls(side.strip(), pert.strip() or "add_remove")

    def check(self, n: int, m: int):
        if m < 0:
            raise ValueError("m must be >= 0")
        if self.perturbation == "add_remove":
            if n < 1:
                raise ValueError("n must be >= 1")
        elif self.side == "out" and not n >= m:
            raise ValueError("out-of-sample swap stability needs n >= m")
        elif self.side == "in" and not n > m:
            raise ValueError("in-sample swap stability needs n > m")


OUT = StabilityVariant("out", "add_remove")
IN = StabilityVariant("in", "add_remove")
OUT_SWAP = StabilityVariant("out", "swap")
IN_SWAP = StabilityVariant("in", "swap")


@dataclass(frozen=True)
class StabilityEstimate:
    variant: StabilityVariant
    n: int
    m: int
    trials: int
    mean: float
    stderr: float
    samples: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class TailStabilityEstimate:
    variant: StabilityVariant
    n: int
    m: int
    epsilon: float
    nu_hat: float
    trials: int

    @property
    def stderr(self) -> float:
        return math.sqrt(self.nu_hat * (1 - self.nu_hat) / self.trials)


def _summarize(variant, n, m, samples) -> StabilityEstimate:
    samples = np.asarray(samples, dtype=float)
    t = len(samples)
    se = float(np.std(samples, ddof=1) / math.sqrt(t)) if t > 1 else math.inf
    return StabilityEstimate(variant, n, m, t, float(np.mean(samples)), se, samples)


def _pair_trial(t, alg, dist, variant, n, m, seed) -> float:
    rng = derive_stream(seed, t)
    if variant.perturbation == "add_remove":
        data = dist.sample(n + m, rng)
        a, b = data[:n], data
    else:
        data = dist.sample(n, rng)
        fresh = dist.sample(m, rng)
        a, b = data, data[: n - m].concat(fresh)
    x = dist.sample(1, rng).X if variant.side == "out" else data.X[:1]
    if m == 0:
        return 0.0
    return float(abs(alg.fit(a).predict(x)[0] - alg.fit(b).predict(x)[0]))


def estimate_stability(
    alg: RegressionAlgorithm,
    dist,
    variant: StabilityVariant = OUT,
    n: int = 100,
    m: int = 1,
    trials: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> StabilityEstimate:
    """Monte Carlo mean and standard error of one stability functional."""
    variant.check(n, m)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fn = partial(_pair_trial, alg=alg, dist=dist, variant=variant, n=n, m=m, seed=seed)
    return _summarize(variant, n, m, run_trials(fn, trials, workers))


def estimate_tail_stability(
    alg: RegressionAlgorithm,
    dist,
    n: int,
    m: int,
    epsilon: float,
    trials: int = 1000,
    seed: int = 0,
    variant: StabilityVariant = OUT,
    workers: int = 1,
) -> TailStabilityEstimate:
    """Fraction of trials with |mu_n(X) - mu_{n+m}(X)| > epsilon.

    With the same seed the per-trial differences are exactly those behind
    :func:`estimate_stability`.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    est = estimate_stability(alg, dist, variant, n, m, trials, seed, workers)
    nu = float(np.mean(est.samples > epsilon))
    return TailStabilityEstimate(variant, n, m, epsilon, nu, trials)


# -- curves and the 1-vs-m composite bound ----------------------------------


@dataclass(frozen=True)
class StabilityCurve:
    """Estimates of beta_{m,n} for several m plus the one-step composite bound.

    For add/remove variants ``lemma[i]`` estimates
    sum_{k=n}^{n+m-1} beta_{1,k}; for swap variants it estimates
    m * beta_bar_{1,n}.
    """

    estimates: list[StabilityEstimate]
    lemma: list[float]
    lemma_stderr: list[float]

    @property
    def m_values(self) -> list[int]:
        return [e.m for e in self.estimates]

    def combined_stderr(self, i: int) -> float:
        return math.hypot(self.estimates[i].stderr, self.lemma_stderr[i])


def _chain_trial(t, alg, dist, variant, n, m_max, seed) -> np.ndarray:
    """Predictions of the nested/swapped fits used by one curve trial.

    add/remove: row j is mu_{n+j} at the evaluation point, j = 0..m_max, all
    fits sharing one growing sample. swap: entry 0 is mu_n and entry j the
    fit with the last j points replaced.
    """
    rng = derive_stream(seed, t)
    if variant.perturbation == "add_remove":
        data = dist.sample(n + m_max, rng)
        x = dist.sample(1, rng).X if variant.side == "out" else data.X[:1]
        return np.array([alg.fit(data[: n + j]).predict(x)[0] for j in range(m_max + 1)])
    data = dist.sample(n, rng)
    fresh = dist.sample(m_max, rng)
    x = dist.sample(1, rng).X if variant.side == "out" else data.X[:1]
    preds = [alg.fit(data).predict(x)[0]]
    for j in range(1, m_max + 1):
        preds.append(alg.fit(data[: n - j].concat(fresh[m_max - j:])).predict(x)[0])
    return np.array(preds)


def stability_curve(
    alg: RegressionAlgorithm,
    dist,
    variant: StabilityVariant,
    n: int,
    m_list,
    trials: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> StabilityCurve:
    """beta_hat_{m,n} for every m in ``m_list`` with the composite bound.

    All quantities come from the same trials: for add/remove the fits are
    nested prefixes of one sample of size n + max(m), so beta_{m,n} and each
    beta_{1,k} are unbiased and positively coupled.
    """
    m_list = [int(m) for m in m_list]
    if not m_list:
        raise ValueError("m_list must be nonempty")
    if m_list != sorted(m_list) or m_list[0] < 1:
        raise ValueError("m_list must be ascending positive integers")
    m_max = m_list[-1]
    variant.check(n, m_max)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fn = partial(_chain_trial, alg=alg, dist=dist, variant=variant, n=n, m_max=m_max, seed=seed)
    P = np.stack(run_trials(fn, trials, workers))
    ests, lemma, lemma_se = [], [], []
    if variant.perturbation == "add_remove":
        steps = np.abs(np.diff(P, axis=1))
        cum = np.cumsum(steps, axis=1)
        for m in m_list:
            ests.append(_summarize(variant, n, m, np.abs(P[:, m] - P[:, 0])))
            s = _summarize(variant, n, m, cum[:, m - 1])
            lemma.append(s.mean)
            lemma_se.append(s.stderr)
    else:
        one = np.abs(P[:, 1] - P[:, 0])
        for m in m_list:
            ests.append(_summarize(variant, n, m, np.abs(P[:, m] - P[:, 0])))
            s = _summarize(variant, n, m, m * one)
            lemma.append(s.mean)
            lemma_se.append(s.stderr)
    return StabilityCurve(ests, lemma, lemma_se)


def lemma_bound(one_step: list[float]) -> float:
    """Sum of one-point stabilities beta_{1,n}, ..., beta_{1,n+m-1}."""
    return float(sum(one_step))


# -- closed-form bounds -----------------------------------------------------


def knn_stability_bound(B_Y: float, m: int, n: int) -> float:
    """2 B_Y m / (n + m); bounds both in- and out-of-sample m-stability of kNN."""
    if m < 0 or n < 1:
        raise ValueError("need m >= 0 and n >= 1")
    return 2.0 * B_Y * m / (n + m)


def ridge_stability_bound(B_X: float, B_Y: float, lam: float, m: int, n: int) -> float:
    """(2 B_X^2 B_Y / lam)(1 + B_X^2 / lam) * m/(n+m) * (1/sqrt(m) + 1/sqrt(n))."""
    if not (B_X > 0 and B_Y > 0 and lam > 0) or m < 0 or n < 1:
        raise ValueError("need positive B_X, B_Y, lam, n and m >= 0")
    const = 2.0 * B_X**2 * B_Y / lam * (1.0 + B_X**2 / lam)
    # m/(n+m) * (1/sqrt(m) + 1/sqrt(n)), written to stay finite at m = 0
    return const * (math.sqrt(m) + m / math.sqrt(n)) / (n + m)


def bagging_stability_bound(n: int, N: int, m: int, B: int) -> float:
    """sqrt(m/(4n) * N/(n+1-N)) + 1/sqrt(B), for base outputs in [0, 1]."""
    if not 1 <= N < n:
        raise ValueError("bag size must satisfy 1 <= N < n")
    if m < 0 or B < 1:
        raise ValueError("need m >= 0 and B >= 1")
    return math.sqrt(m / (4.0 * n) * N / (n + 1.0 - N)) + 1.0 / math.sqrt(B)


def theory_bound(alg: RegressionAlgorithm, dist, m: int, n: int) -> tuple[float | None, str]:
    """The closed-form bound that applies to ``alg`` on ``dist``, if any.

    Returns (value, kind); kind is ``"none"`` when no bound applies or the
    distribution lacks the analytic constants it needs.
    """
    B_Y, B_X = getattr(dist, "B_Y", None), getattr(dist, "B_X", None)
    if isinstance(alg, KNNRegressor) and B_Y is not None:
        return knn_stability_bound(B_Y, m, n), "knn"
    if isinstance(alg, RidgeRegressor) and B_Y is not None and B_X is not None:
        return ridge_stability_bound(B_X, B_Y, alg.lam, m, n), "ridge"
    if (
        isinstance(alg, SubbagRegressor)
        and isinstance(alg.base, ClippedRegressor)
        and alg.base.lo >= 0
        and alg.base.hi <= 1
        and alg.N < n
    ):
        return bagging_stability_bound(n, alg.N, m, alg.B), "bagging"
    return None, "none"
