"""Symmetric base learners: kNN, ridge, CART regression tree, subbagging.

Every learner sorts its training data into canonical (x, y) order before
any order-sensitive step, so fitting a permutation of the same multiset
gives bitwise-identical predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import Dataset, Predictor, RegressionAlgorithm, derive_stream


class _ArrayPredictor(Predictor):
    def __init__(self, n: int, algorithm: str):
        self.n = n
        self.algorithm = algorithm

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        return X


# -- trivial learners, mostly useful as oracles in tests --------------------


class ConstantPredictor(_ArrayPredictor):
    def __init__(self, value: float, n: int = 0, algorithm: str = "constant"):
        super().__init__(n, algorithm)
        self.value = float(value)

    def predict(self, X):
        X = self._check(X)
        return np.full(X.shape[0], self.value)


@dataclass(frozen=True)
class ConstantRegressor(RegressionAlgorithm):
    """Ignores the data and predicts ``value`` everywhere."""

    value: float = 0.0
    name = "constant"

    def fit(self, data: Dataset) -> Predictor:
        return ConstantPredictor(self.value, data.n, self.name)


@dataclass(frozen=True)
class MeanRegressor(RegressionAlgorithm):
    """Predicts the mean training response everywhere."""

    name = "mean"

    def fit(self, data: Dataset) -> Predictor:
        c = data.canonical()
        value = float(np.mean(c.y)) if c.n else 0.0
        return ConstantPredictor(value, data.n, self.name)


@dataclass(frozen=True)
class SizeRegressor(RegressionAlgorithm):
    """Predicts ``scale * n`` -- stable under swaps, unstable under additions."""

    scale: float = 1.0
    name = "size"

    def fit(self, data: Dataset) -> Predictor:
        return ConstantPredictor(self.scale * data.n, data.n, self.name)


# -- k nearest neighbours ---------------------------------------------------


class KNNPredictor(_ArrayPredictor):
    def __init__(self, X: np.ndarray, y: np.ndarray, k: int):
        super().__init__(len(y), "knn")
        self.X = X
        self.y = y
        self.k = k

    def predict(self, X):
        Q = self._check(X)
        out = np.empty(Q.shape[0])
        step = max(1, 2**22 // max(1, self.X.size))
        for start in range(0, Q.shape[0], step):
            q = Q[start: start + step]
            diff = q[:, None, :] - self.X[None, :, :]
            d2 = np.einsum("qnd,qnd->qn", diff, diff)
            # stable sort: equal distances keep the smaller canonical index
            nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            nearest.sort(axis=1)
            out[start: start + step] = self.y[nearest].mean(axis=1)
        return out


def fit_knn(train: Dataset, k: int) -> KNNPredictor:
    """Fit k-nearest-neighbour regression (Euclidean distance, uniform weights)."""
    if train.n == 0:
        raise ValueError("empty training set")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > train.n:
        raise ValueError("k exceeds sample size")
    c = train.canonical()
    return KNNPredictor(c.X, c.y, k)


@dataclass(frozen=True)
class KNNRegressor(RegressionAlgorithm):
    k: int = 20
    name = "knn"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def fit(self, data: Dataset) -> Predictor:
        return fit_knn(data, self.k)


# -- ridge regression -------------------------------------------------------


class LinearPredictor(_ArrayPredictor):
    def __init__(self, theta: np.ndarray, n: int, algorithm: str = "ridge"):
        super().__init__(n, algorithm)
        self.theta = theta

    def predict(self, X):
        return self._check(X) @ self.theta


def fit_ridge(train: Dataset, lam: float) -> LinearPredictor:
    """Ridge without intercept on the 1/n-scaled objective.

    theta = (X'X/n + lam I)^{-1} X'y/n, via a Cholesky solve.
    """
    if train.n == 0:
        raise ValueError("empty training set")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    c = train.canonical()
    n, d = c.X.shape
    gram = c.X.T @ c.X / n + lam * np.eye(d)
    rhs = c.X.T @ c.y / n
    theta = scipy.linalg.solve(gram, rhs, assume_a="pos")
    return LinearPredictor(theta, n)


@dataclass(frozen=True)
class RidgeRegressor(RegressionAlgorithm):
    lam: float = 0.01
    name = "ridge"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    def fit(self, data: Dataset) -> Predictor:
        return fit_ridge(data, self.lam)


# -- CART regression tree ---------------------------------------------------


class TreePredictor(_ArrayPredictor):
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value, n: int):
        super().__init__(n, "tree")
        self.feature = np.asarray(feature, dtype=np.intp)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.intp)
        self.right = np.asarray(right, dtype=np.intp)
        self.value = np.asarray(value, dtype=float)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X):
        Q = self._check(X)
        node = np.zeros(Q.shape[0], dtype=np.intp)
        rows = np.arange(Q.shape[0])
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            r = rows[internal]
            nd = node[internal]
            go_left = Q[r, f[internal]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive variance-reduction split search over all features.

    Returns (feature, threshold, gain) or None. Ties go to the lowest feature
    index, then the lowest threshold.
    """
    s, d = X.shape
    if s < 2 * min_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1, 0]
    # left child = first i+1 points, for i = min_leaf-1 .. s-min_leaf-1
    lo, hi = min_leaf - 1, s - min_leaf
    nl = np.arange(lo + 1, hi + 1, dtype=float)[:, None]
    sl = csum[lo:hi]
    sr = total - sl
    # maximising sl^2/nl + sr^2/nr minimises the children's total SSE
    score = sl * sl / nl + sr * sr / (s - nl)
    valid = Xs[lo:hi] < Xs[lo + 1: hi + 1]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    # column-major argmax: lowest feature first, then lowest position
    flat = np.argmax(score.T)
    j, i = divmod(int(flat), score.shape[0])
    gain = score[i, j] - total * total / s
    # relative tolerance guards against splitting on rounding noise
    if not gain > 1e-12 * max(1.0, float(np.dot(y, y))):
        return None
    thr = 0.5 * (Xs[lo + i, j] + Xs[lo + i + 1, j])
    return j, thr, gain


def fit_tree(train: Dataset, max_depth: int = 8, min_leaf: int = 1) -> TreePredictor:
    """Greedy CART regression tree with midpoint thresholds and mean leaves."""
    if train.n == 0:
        raise ValueError("empty training set")
    if max_depth < 1 or min_leaf < 1:
        raise ValueError("max_depth and min_leaf must be >= 1")
    c = train.canonical()
    X, y = c.X, c.y
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        return len(feature) - 1

    stack = [(new_node(np.arange(c.n)), np.arange(c.n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or idx.size < 2 * min_leaf or np.ptp(y[idx]) == 0:
            continue
        split = _best_split(X[idx], y[idx], min_leaf)
        if split is None:
            continue
        j, thr, _ = split
        mask = X[idx, j] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node] = j
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return TreePredictor(feature, threshold, left, right, value, c.n)


@dataclass(frozen=True)
class TreeRegressor(RegressionAlgorithm):
    max_depth: int = 8
    min_leaf: int = 1
    name = "tree"

    def __post_init__(self):
        if self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("max_depth and min_leaf must be >= 1")

    def fit(self, data: Dataset) -> Predictor:
        return fit_tree(data, self.max_depth, self.min_leaf)


# -- output clipping and subbagging ----------------------------------------


class ClippedPredictor(_ArrayPredictor):
    def __init__(self, inner: Predictor, lo: float, hi: float):
        super().__init__(inner.n, f"clip({inner.algorithm})")
        self.inner, self.lo, self.hi = inner, lo, hi

    def predict(self, X):
        return np.clip(self.inner.predict(self._check(X)), self.lo, self.hi)


@dataclass(frozen=True)
class ClippedRegressor(RegressionAlgorithm):
    """Wraps a learner so its predictions lie in [lo, hi]."""

    base: RegressionAlgorithm
    lo: float = 0.0
    hi: float = 1.0
    name = "clipped"

    def fit(self, data: Dataset) -> Predictor:
        return ClippedPredictor(self.base.fit(data), self.lo, self.hi)


class AveragePredictor(_ArrayPredictor):
    def __init__(self, members: list[Predictor], n: int):
        super().__init__(n, "subbag")
        self.members = members

    def predict(self, X):
        Q = self._check(X)
        acc = np.zeros(Q.shape[0])
        for p in self.members:
            acc += p.predict(Q)
        return acc / len(self.members)


def fit_subbag(
    train: Dataset, base: RegressionAlgorithm, N: int, B: int, bag_seed: int = 0
) -> AveragePredictor:
    """Average ``base`` over B subsamples of size N drawn without replacement.

    The subsamples are drawn from a stream keyed on ``bag_seed`` and the
    dataset's order-invariant digest, so the fit is a deterministic,
    symmetric function of the training multiset.
    """
    n = train.n
    if N < 1 or B < 1:
        raise ValueError("N and B must be >= 1")
    if N >= n:
        raise ValueError("bag size must be < n")
    c = train.canonical()
    rng = derive_stream(bag_seed, c.digest()).generator
    members = []
    for _ in range(B):
        idx = np.sort(rng.choice(n, size=N, replace=False))
        members.append(base.fit(c[idx]))
    return AveragePredictor(members, n)


@dataclass(frozen=True)
class SubbagRegressor(RegressionAlgorithm):
    base: RegressionAlgorithm
    N: int
    B: int = 50
    bag_seed: int = 0
    name = "subbag"

    def __post_init__(self):
        if self.N < 1 or self.B < 1:
            raise ValueError("N and B must be >= 1")

    def fit(self, data: Dataset) -> Predictor:
        return fit_subbag(data, self.base, self.N, self.B, self.bag_seed)


_REGISTRY = {
    "zero": lambda **kw: ConstantRegressor(0.0),
    "constant": lambda value=0.0: ConstantRegressor(float(value)),
    "mean": lambda: MeanRegressor(),
    "knn": lambda k=20: KNNRegressor(int(k)),
    "ridge": lambda lam=0.01: RidgeRegressor(float(lam)),
    "tree": lambda max_depth=8, min_leaf=1: TreeRegressor(int(max_depth), int(min_leaf)),
}


def make_algorithm(spec: str) -> RegressionAlgorithm:
    """Build a learner from a compact string such as ``"knn:k=20"``.

    Forms: ``zero``, ``mean``, ``constant:value=1``, ``knn:k=20``,
    ``ridge:lam=0.01``, ``tree:max_depth=8,min_leaf=1`` and
    ``subbag:N=250,B=50,bag_seed=0,max_depth=8[,clip=1]`` (subbagged trees,
    optionally with outputs clipped to [0, 1]).
    """
    name, _, rest = spec.strip().partition(":")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"bad parameter {item!r} in {spec!r}")
        params[key.strip()] = val.strip()
    name = name.strip().lower()
    try:
        if name in ("subbag", "subbag-tree", "forest"):
            N = int(params.pop("N"))
            B = int(params.pop("B", 50))
            bag_seed = int(params.pop("bag_seed", 0))
            clip = params.pop("clip", "0") not in ("0", "false", "no")
            base = TreeRegressor(int(params.pop("max_depth", 8)), int(params.pop("min_leaf", 1)))
            if params:
                raise TypeError(f"unknown parameters {sorted(params)}")
            if clip:
                base = ClippedRegressor(base)
            return SubbagRegressor(base, N, B, bag_seed)
        if name == "clipped-tree":
            return ClippedRegressor(_REGISTRY["tree"](**params))
        return _REGISTRY[name](**params)
    except KeyError as exc:
        raise ValueError(f"unknown algorithm or missing parameter in {spec!r}: {exc}") from None
    except TypeError as exc:
        raise ValueError(f"bad parameters in {spec!r}: {exc}") from None
