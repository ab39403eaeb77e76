"""Shared data types, the conformal quantile, and per-trial random streams.

Extended reals are IEEE-754 floats: ``math.inf`` and ``-math.inf`` are the
two infinities, and every interval endpoint is a plain ``float``.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

INF = math.inf

# tau * n within this distance of an integer is snapped to it before ceil,
# so that (1 - 0.25) * (1 + 1/3) * 3 gives rank 3 and not 4.
_RANK_SNAP = 1e-9


@dataclass(frozen=True)
class DataPoint:
    x: np.ndarray
    y: float


class Dataset:
    """Ordered multiset of (x, y) pairs with a shared feature dimension.

    Arrays are copied on construction and marked read-only, so a Dataset can
    be shared freely between fits and worker processes.
    """

    __slots__ = ("X", "y")

    def __init__(self, X, y, d: int | None = None):
        X = np.array(X, dtype=float)
        y = np.array(y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, d or 1)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array of shape (n, d)")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if d is not None and X.shape[1] != d:
            raise ValueError(f"expected dimension {d}, got {X.shape[1]}")
        if X.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset entries must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        self.X = X
        self.y = y

    @classmethod
    def _trusted(cls, X: np.ndarray, y: np.ndarray) -> "Dataset":
        # arrays derived from validated datasets skip the checks and copy
        out = object.__new__(cls)
        X.setflags(write=False)
        y.setflags(write=False)
        out.X, out.y = X, y
        return out

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.empty((0, d)), np.empty(0))

    @classmethod
    def from_points(cls, points: Iterable[DataPoint], d: int | None = None) -> "Dataset":
        pts = list(points)
        if not pts:
            if d is None:
                raise ValueError("dimension required for an empty dataset")
            return cls.empty(d)
        return cls(np.stack([np.atleast_1d(p.x) for p in pts]), [p.y for p in pts], d)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[DataPoint]:
        for i in range(self.n):
            yield DataPoint(self.X[i], float(self.y[i]))

    def __getitem__(self, idx) -> "Dataset":
        if isinstance(idx, slice):
            return Dataset._trusted(self.X[idx], self.y[idx])
        idx = np.atleast_1d(np.arange(self.n)[idx])
        return Dataset._trusted(self.X[idx], self.y[idx])

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.d})"

    def concat(self, other: "Dataset") -> "Dataset":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return Dataset._trusted(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]))

    def append(self, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, self.d)
        y = float(y)
        if not (np.isfinite(x).all() and math.isfinite(y)):
            raise ValueError("dataset entries must be finite")
        return Dataset._trusted(np.vstack([self.X, x]), np.append(self.y, y))

    def without(self, i: int) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return Dataset._trusted(self.X[keep], self.y[keep])

    def permuted(self, perm: Sequence[int]) -> "Dataset":
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise ValueError("not a permutation of the dataset indices")
        return Dataset._trusted(self.X[perm], self.y[perm])

    def canonical(self) -> "Dataset":
        """Return the points sorted lexicographically by (x_1, ..., x_d, y)."""
        order = canonical_order(self.X, self.y)
        return Dataset._trusted(self.X[order], self.y[order])

    def digest(self) -> int:
        """64-bit order-invariant fingerprint of the multiset of points."""
        c = self.canonical()
        h = hashlib.blake2b(digest_size=8)
        h.update(np.int64(c.d).tobytes())
        h.update(np.ascontiguousarray(c.X).tobytes())
        h.update(np.ascontiguousarray(c.y).tobytes())
        return int.from_bytes(h.digest(), "little")


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # np.lexsort uses the last key as primary
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


class Predictor:
    """A fitted regression function x -> y_hat.

    Subclasses implement :meth:`predict` on a 2-d batch of query points.
    Calling the predictor on a single vector returns a float.
    """

    n: int = 0
    algorithm: str = ""

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            return float(self.predict(x.reshape(1, -1))[0])
        return self.predict(x)


class RegressionAlgorithm:
    """Base class for symmetric, deterministic fitting rules."""

    name = "algorithm"

    def fit(self, data: Dataset) -> Predictor:
        raise NotImplementedError


def conformal_rank(tau: float, n: int) -> int:
    """Index k (1-based) of the order statistic returned at level ``tau``."""
    t = tau * n
    r = round(t)
    if abs(t - r) <= _RANK_SNAP * max(1.0, abs(t)):
        t = r
    return max(1, math.ceil(t))


def conformal_quantile(values, tau: float, axis: int | None = None):
    """The ceil(tau * n)-th smallest of ``values``, or +inf when that exceeds n.

    A rank of zero (only at ``tau == 0``) is clamped to 1, returning the
    minimum. With ``axis`` given, the quantile is taken along that axis of an
    array and an array of results is returned.

    >>> conformal_quantile([1, 2, 3, 4], 0.5)
    2.0
    >>> conformal_quantile([1, 2, 3], 1.2)
    inf
    """
    if tau < 0 or math.isnan(tau):
        raise ValueError("tau must be nonnegative")
    v = np.asarray(values, dtype=float)
    if axis is None:
        v = v.reshape(-1)
        axis = 0
    n = v.shape[axis]
    if n == 0:
        raise ValueError("empty sample")
    k = conformal_rank(tau, n)
    if k > n:
        shape = v.shape[:axis] + v.shape[axis + 1:]
        return INF if not shape else np.full(shape, INF)
    out = np.take(np.partition(v, k - 1, axis=axis), k - 1, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] over the extended reals."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints must not be NaN")
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]; use EMPTY")

    def __contains__(self, y: float) -> bool:
        return self.lo <= y <= self.hi

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by (seed, index).

    The generator is built from ``SeedSequence(seed, spawn_key=(index,))``,
    the same derivation numpy uses for spawned child streams.
    """

    seed: int
    index: int
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("stream index must be nonnegative")
        ss = np.random.SeedSequence(self.seed % 2**64, spawn_key=(self.index,))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(ss)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __getattr__(self, name):
        # delegate uniform/normal/choice/... to the generator
        if name.startswith("_"):
            raise AttributeError(name)
        return getattr(self._gen, name)


def derive_stream(seed: int, trial_index: int) -> RngStream:
    return RngStream(int(seed), int(trial_index))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def run_trials(fn: Callable[[int], T], trials: int, workers: int = 1) -> list[T]:
    """Evaluate ``fn(t)`` for t in range(trials), returned in trial order.

    ``fn`` must be picklable when ``workers > 1``. Each trial derives its own
    stream from its index, so the result does not depend on ``workers``.
    """
    if workers <= 1 or trials <= 1:
        return [fn(t) for t in range(trials)]
    chunk = max(1, trials // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials), chunksize=chunk))
