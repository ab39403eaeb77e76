"""Split conformal, inflated jackknife+, and grid-based full conformal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Dataset,
    Interval,
    Predictor,
    RegressionAlgorithm,
    conformal_quantile,
)


@dataclass(frozen=True)
class PredictionSet:
    """A finite union of disjoint closed intervals, sorted by left endpoint."""

    intervals: tuple[Interval, ...]
    method: str = ""
    alpha: float = math.nan
    gamma: float = 0.0

    def __post_init__(self):
        ivs = tuple(self.intervals)
        for a, b in zip(ivs, ivs[1:]):
            if not a.hi < b.lo:
                raise ValueError("intervals must be sorted and pairwise disjoint")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def empty(cls, method: str = "", alpha: float = math.nan, gamma: float = 0.0):
        return cls((), method, alpha, gamma)

    @classmethod
    def single(cls, lo: float, hi: float, method: str = "", alpha=math.nan, gamma=0.0):
        if lo > hi:
            return cls.empty(method, alpha, gamma)
        return cls((Interval(lo, hi),), method, alpha, gamma)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def lo(self) -> float:
        return self.intervals[0].lo if self.intervals else math.nan

    @property
    def hi(self) -> float:
        return self.intervals[-1].hi if self.intervals else math.nan

    def measure(self) -> float:
        return float(sum(iv.length for iv in self.intervals))

    def __contains__(self, y: float) -> bool:
        return any(y in iv for iv in self.intervals)

    def contains(self, y) -> np.ndarray:
        """Vectorised membership test."""
        y = np.asarray(y, dtype=float)
        hit = np.zeros(y.shape, dtype=bool)
        for iv in self.intervals:
            hit |= (y >= iv.lo) & (y <= iv.hi)
        return hit

    def issubset(self, other: "PredictionSet") -> bool:
        return all(
            any(o.lo <= iv.lo and iv.hi <= o.hi for o in other.intervals)
            for iv in self.intervals
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "intervals": [[iv.lo, iv.hi] for iv in self.intervals],
        }


def conformal_level(alpha: float, n: int) -> float:
    """The level (1 - alpha)(1 + 1/n) used by all three methods."""
    return (1.0 - alpha) * (1.0 + 1.0 / n)


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def _check_gamma(gamma: float):
    if not gamma >= 0.0:
        raise ValueError("gamma must be nonnegative")


def _rows(X) -> np.ndarray:
    """Query points as a 2-d array; a 1-d input is a single point."""
    X = np.asarray(X, dtype=float)
    return X.reshape(1, -1) if X.ndim <= 1 else X


# -- split conformal --------------------------------------------------------


@dataclass(frozen=True)
class SplitConformal:
    """Fitted split-conformal rule: mu(x) +/- margin."""

    predictor: Predictor
    margin: float
    alpha: float

    def predict_interval(self, X) -> tuple[np.ndarray, np.ndarray]:
        mu = self.predictor.predict(_rows(X))
        return mu - self.margin, mu + self.margin

    def prediction_set(self, x) -> PredictionSet:
        lo, hi = self.predict_interval(x)
        return PredictionSet.single(float(lo[0]), float(hi[0]), "split", self.alpha)


def fit_split_conformal(
    train: Dataset, calib: Dataset, alg: RegressionAlgorithm, alpha: float
) -> SplitConformal:
    _check_alpha(alpha)
    if train.n == 0:
        raise ValueError("empty training set")
    if calib.n == 0:
        raise ValueError("empty calibration set")
    mu = alg.fit(train)
    resid = np.abs(calib.y - mu.predict(calib.X))
    q = conformal_quantile(resid, conformal_level(alpha, calib.n))
    return SplitConformal(mu, q, alpha)


def split_conformal(
    train: Dataset, calib: Dataset, alg: RegressionAlgorithm, alpha: float, x
) -> PredictionSet:
    """Split-conformal interval at ``x``; (-inf, inf) when the quantile overflows."""
    return fit_split_conformal(train, calib, alg, alpha).prediction_set(x)


# -- jackknife+ -------------------------------------------------------------


@dataclass(frozen=True)
class LooFit:
    """Leave-one-out models and residuals R_i = |Y_i - mu_{-i}(X_i)|."""

    predictors: tuple[Predictor, ...]
    residuals: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.predictors)

    def loo_predictions(self, X) -> np.ndarray:
        """Matrix of mu_{-i}(x_j), shape (n, number of queries)."""
        return np.stack([p.predict(X) for p in self.predictors])


def loo_fit(train: Dataset, alg: RegressionAlgorithm) -> LooFit:
    if train.n < 2:
        raise ValueError("need at least 2 points")
    preds, resid = [], np.empty(train.n)
    for i in range(train.n):
        mu = alg.fit(train.without(i))
        preds.append(mu)
        resid[i] = abs(train.y[i] - mu(train.X[i]))
    resid.setflags(write=False)
    return LooFit(tuple(preds), resid)


@dataclass(frozen=True)
class JackknifePlus:
    loo: LooFit
    alpha: float
    gamma: float = 0.0

    def predict_interval(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper endpoints for each query row (+/-inf on overflow)."""
        X = _rows(X)
        M = self.loo.loo_predictions(X)
        R = self.loo.residuals[:, None]
        tau = conformal_level(self.alpha, len(self.loo))
        hi = np.asarray(conformal_quantile(M + R, tau, axis=0), dtype=float) + self.gamma
        lo = -np.asarray(conformal_quantile(-M + R, tau, axis=0), dtype=float) - self.gamma
        return lo, hi

    def prediction_set(self, x) -> PredictionSet:
        lo, hi = self.predict_interval(x)
        return PredictionSet.single(float(lo[0]), float(hi[0]), "jplus", self.alpha, self.gamma)


def fit_jackknife_plus(
    train: Dataset, alg: RegressionAlgorithm, alpha: float, gamma: float = 0.0,
    loo: LooFit | None = None,
) -> JackknifePlus:
    _check_alpha(alpha)
    _check_gamma(gamma)
    return JackknifePlus(loo if loo is not None else loo_fit(train, alg), alpha, gamma)


def jackknife_plus(
    train: Dataset, alg: RegressionAlgorithm, alpha: float, gamma: float, x
) -> PredictionSet:
    """gamma-inflated jackknife+ interval at ``x`` (gamma = 0 is plain J+)."""
    return fit_jackknife_plus(train, alg, alpha, gamma).prediction_set(x)


# -- full conformal ---------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    count: int = 2001

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.count < 2:
            raise ValueError("grid needs at least 2 points")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    @classmethod
    def default_for(cls, y, count: int = 2001) -> "GridSpec":
        """[min - 3 range - 1, max + 3 range + 1] around the observed responses."""
        y = np.asarray(y, dtype=float)
        ymin, ymax = float(y.min()), float(y.max())
        span = ymax - ymin
        return cls(ymin - 3 * span - 1, ymax + 3 * span + 1, count)


def full_conformal_membership(
    train: Dataset, alg: RegressionAlgorithm, alpha: float, gamma: float, x, ys
) -> np.ndarray:
    """Boolean mask: which hypothesised responses ``ys`` enter the set at ``x``."""
    _check_alpha(alpha)
    _check_gamma(gamma)
    if train.n < 1:
        raise ValueError("need at least 1 point")
    x = np.asarray(x, dtype=float).reshape(1, train.d)
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    tau = conformal_level(alpha, train.n)
    keep = np.empty(ys.shape[0], dtype=bool)
    for j, y in enumerate(ys):
        mu = alg.fit(train.append(x[0], y))
        q = conformal_quantile(np.abs(train.y - mu.predict(train.X)), tau)
        keep[j] = abs(y - mu.predict(x)[0]) <= q + gamma
    return keep


def runs_to_set(mask: np.ndarray, grid: GridSpec, method="full_cp", alpha=math.nan, gamma=0.0):
    """Union of maximal runs of included grid points, each widened by h/2."""
    vals = grid.values()
    h = grid.step
    intervals = []
    i, n = 0, len(mask)
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and mask[j + 1]:
            j += 1
        intervals.append(Interval(vals[i] - h / 2, vals[j] + h / 2))
        i = j + 1
    return PredictionSet(tuple(intervals), method, alpha, gamma)


def full_conformal(
    train: Dataset,
    alg: RegressionAlgorithm,
    alpha: float,
    gamma: float,
    x,
    grid: GridSpec | None = None,
) -> PredictionSet:
    """gamma-inflated full conformal set at ``x``, resolved on a response grid.

    Each grid value y is refitted on train + (x, y). Runs of accepted grid
    points become intervals widened by half a grid step on each side, so the
    discretisation can only enlarge the set.
    """
    if grid is None:
        grid = GridSpec.default_for(train.y)
    mask = full_conformal_membership(train, alg, alpha, gamma, x, grid.values())
    return runs_to_set(mask, grid, "full_cp", alpha, gamma)
