"""Synthetic data distributions with their analytic bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar

import numpy as np

from .core import Dataset, as_generator


class DistributionSpec:
    """A distribution P on R^d x R that can be sampled from a stream.

    ``B_Y`` bounds |Y|, ``B_X`` bounds ||X||_2 and ``B_dens`` is
    E[sup_y f(y | X)]. Each is ``None`` when no finite bound is known.
    """

    kind: ClassVar[str] = "custom"
    d: int

    B_Y: float | None = None
    B_X: float | None = None
    B_dens: float | None = None

    def sample(self, count: int, rng) -> Dataset:
        raise NotImplementedError


@dataclass(frozen=True)
class SineMixture(DistributionSpec):
    """X ~ Unif[0,1]^d, Y = sum_j sin(X_j / j) + eps.

    eps is Unif[-1, 1] with probability 1/3 and Unif[-0.1, 0.1] otherwise.
    """

    d: int = 40
    kind: ClassVar[str] = "sine_mixture"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def B_Y(self) -> float:
        return 1.0 + sum(min(1.0, 1.0 / j) for j in range(1, self.d + 1))

    @property
    def B_X(self) -> float:
        return math.sqrt(self.d)

    @property
    def B_dens(self) -> float:
        return (1 / 3) * (1 / 2) + (2 / 3) * 5.0

    def signal(self, X: np.ndarray) -> np.ndarray:
        return np.sin(X / np.arange(1, self.d + 1)).sum(axis=1)

    def noise(self, count: int, rng) -> np.ndarray:
        g = as_generator(rng)
        wide = g.random(count) < 1 / 3
        u = g.uniform(-1.0, 1.0, count)
        return np.where(wide, u, 0.1 * u)

    def sample(self, count: int, rng) -> Dataset:
        g = as_generator(rng)
        X = g.random((count, self.d))
        return Dataset(X, self.signal(X) + self.noise(count, g), self.d)


@dataclass(frozen=True)
class LinearGaussian(DistributionSpec):
    """X ~ N(0, I_d), Y = X'w + N(0, noise_sd^2).

    The coefficient vector w ~ N(0, I_d / d) is fixed at construction from
    ``w_seed``, so every sample call draws from the same distribution.
    """

    d: int = 10
    noise_sd: float = 1.0
    w_seed: int = 0
    kind: ClassVar[str] = "linear_gaussian"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @cached_property
    def w(self) -> np.ndarray:
        return np.random.default_rng(self.w_seed).normal(size=self.d) / math.sqrt(self.d)

    @property
    def B_dens(self) -> float | None:
        return 1.0 / (self.noise_sd * math.sqrt(2 * math.pi)) if self.noise_sd > 0 else None

    def sample(self, count: int, rng) -> Dataset:
        g = as_generator(rng)
        X = g.normal(size=(count, self.d))
        y = X @ self.w + self.noise_sd * g.normal(size=count)
        return Dataset(X, y, self.d)


@dataclass(frozen=True)
class BoundedUniform(DistributionSpec):
    """X ~ Unif[0,1]^d, Y = (mean(X) + U) / 2 with U ~ Unif[0,1]; Y lies in [0,1]."""

    d: int = 5
    kind: ClassVar[str] = "custom_bounded"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")

    B_Y: ClassVar[float] = 1.0
    B_dens: ClassVar[float] = 2.0

    @property
    def B_X(self) -> float:
        return math.sqrt(self.d)

    def sample(self, count: int, rng) -> Dataset:
        g = as_generator(rng)
        X = g.random((count, self.d))
        u = g.random(count)
        mean = X.mean(axis=1) if count else np.empty(0)
        return Dataset(X, 0.5 * (mean + u), self.d)


_KINDS = {
    "sine": SineMixture,
    "sine_mixture": SineMixture,
    "linear": LinearGaussian,
    "linear_gaussian": LinearGaussian,
    "bounded": BoundedUniform,
    "custom_bounded": BoundedUniform,
}


def make_distribution(spec: str) -> DistributionSpec:
    """Parse ``"sine:d=40"``, ``"linear:d=10,noise_sd=1"`` or ``"bounded:d=5"``."""
    name, _, rest = spec.strip().partition(":")
    cls = _KINDS.get(name.strip().lower())
    if cls is None:
        raise ValueError(f"unknown distribution {name!r}; choose from {sorted(set(_KINDS))}")
    kw = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"bad parameter {item!r} in {spec!r}")
        key = key.strip()
        kw[key] = float(val) if key == "noise_sd" else int(val)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ValueError(f"bad parameters in {spec!r}: {exc}") from None
