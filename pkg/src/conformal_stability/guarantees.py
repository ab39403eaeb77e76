"""Finite-sample training-conditional coverage bounds.

Each evaluator returns a :class:`BoundReport` holding a miscoverage
threshold T and a failure probability p such that, for training data of
size n,

    P{ alpha_P(D_n) < T } >= 1 - p.

Values are reported unclamped; a report is *vacuous* when T >= 1 or p >= 1.

The stability input ``beta`` must already be measured at the shifted indices
each bound expects: beta_out(m, n-1) for the jackknife+ bounds and
beta_in(m-1, n+1) for full conformal.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    delta: float
    n: int
    m: int = 1
    beta: float | None = None
    gamma: float | None = None
    b_dens: float | None = None
    epsilon: float | None = None
    nu: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        for name in ("beta", "b_dens", "epsilon", "nu"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be nonnegative")

    def require(self, *names: str):
        missing = [k for k in names if getattr(self, k) is None]
        if missing:
            raise ValueError(f"missing bound input(s): {', '.join(missing)}")


@dataclass(frozen=True)
class BoundReport:
    theorem: str
    threshold: float
    failure_prob: float
    inputs: dict = field(default_factory=dict)
    inflation: float | None = None

    @property
    def vacuous(self) -> bool:
        return self.threshold >= 1 or self.failure_prob >= 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["vacuous"] = self.vacuous
        return out


def concentration_term(delta: float, n: int, m: int) -> float:
    """3 sqrt(log(1/delta) / (2 min(n, m))), the Hoeffding part of every bound."""
    return 3.0 * math.sqrt(math.log(1.0 / delta) / (2.0 * min(n, m)))


def _report(theorem, inputs: BoundInputs, extra: float, fail: float, inflation=None):
    threshold = inputs.alpha + concentration_term(inputs.delta, inputs.n, inputs.m) + extra
    return BoundReport(theorem, threshold, 3.0 * inputs.delta + fail, asdict(inputs), inflation)


def bound_jplus_inflated(inputs: BoundInputs) -> BoundReport:
    """gamma-inflated jackknife+; ``beta`` is beta_out(m, n-1)."""
    inputs.require("beta", "gamma")
    if not inputs.gamma > 0:
        raise ValueError("gamma must be positive")
    s = (2.0 * inputs.beta / inputs.gamma) ** (1.0 / 3.0)
    return _report("jplus", inputs, 2.0 * s, s, inputs.gamma)


def bound_jplus_uninflated(inputs: BoundInputs) -> BoundReport:
    """Plain jackknife+ under a conditional density bounded on average by b_dens."""
    inputs.require("beta", "b_dens")
    if not inputs.b_dens > 0:
        raise ValueError("b_dens must be positive")
    s = (2.0 * inputs.b_dens * inputs.beta) ** 0.25
    return _report("jplus_uninflated", inputs, 4.0 * s, s, 0.0)


def bound_full_conformal(inputs: BoundInputs) -> BoundReport:
    """gamma-inflated full conformal; ``beta`` is beta_in(m-1, n+1)."""
    inputs.require("beta", "gamma")
    if not inputs.gamma > 0:
        raise ValueError("gamma must be positive")
    s = (2.0 * inputs.beta / inputs.gamma) ** (1.0 / 3.0)
    return _report("full_conformal", inputs, 2.0 * s, s, inputs.gamma)


def bound_alternative(inputs: BoundInputs, which: str = "jplus") -> BoundReport:
    """Bounds under (epsilon, nu) tail stability.

    ``which`` is ``"jplus"`` (interval inflated by 2 epsilon),
    ``"jplus_uninflated"`` (needs b_dens) or ``"full_conformal"`` (set
    inflated by 2 epsilon, with epsilon and nu measured in-sample at
    (m-1, n+1)).
    """
    inputs.require("epsilon", "nu")
    s = (2.0 * inputs.nu) ** (1.0 / 3.0)
    if which in ("jplus", "full_conformal"):
        return _report(f"{which}_alt", inputs, 2.0 * s, s, 2.0 * inputs.epsilon)
    if which == "jplus_uninflated":
        inputs.require("b_dens")
        extra = 2.0 * s + 4.0 * inputs.b_dens * inputs.epsilon
        return _report("jplus_uninflated_alt", inputs, extra, s, 0.0)
    raise ValueError(f"unknown variant {which!r}")


def bound_split_conformal(alpha: float, delta: float, n1: int) -> BoundReport:
    if n1 < 1:
        raise ValueError("n1 must be >= 1")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    threshold = alpha + math.sqrt(math.log(1.0 / delta) / (2.0 * n1))
    return BoundReport("split", threshold, delta, {"alpha": alpha, "delta": delta, "n1": n1})


THEOREMS: dict[str, Callable[[BoundInputs], BoundReport]] = {
    "jplus": bound_jplus_inflated,
    "jplus_uninflated": bound_jplus_uninflated,
    "full_conformal": bound_full_conformal,
    "jplus_alt": lambda i: bound_alternative(i, "jplus"),
    "jplus_uninflated_alt": lambda i: bound_alternative(i, "jplus_uninflated"),
    "full_conformal_alt": lambda i: bound_alternative(i, "full_conformal"),
}


def evaluate_bound(theorem: str, inputs: BoundInputs) -> BoundReport:
    if theorem == "split":
        return bound_split_conformal(inputs.alpha, inputs.delta, inputs.n)
    try:
        fn = THEOREMS[theorem]
    except KeyError:
        raise ValueError(f"unknown theorem {theorem!r}; choose from split, {', '.join(THEOREMS)}") from None
    return fn(inputs)


@dataclass(frozen=True)
class AsymptoticStep:
    n: int
    m: int
    delta: float
    epsilon: float
    failure_prob: float


def asymptotic_schedule(n: int, b: float, gamma: float | None = None, b_dens: float | None = None) -> AsymptoticStep:
    """Finite-n point on the schedule behind the asymptotic guarantees.

    ``b`` bounds every one-point stability beta_1,k for k >= n-1. With
    ``gamma`` this follows the inflated schedule m = ceil((b/gamma)^(-1/2));
    with ``b_dens`` instead it follows the uninflated one,
    m = ceil((b b_dens)^(-1/2)). In both cases delta = exp(-sqrt(min(n, m)))
    and P{alpha_P(D_n) >= alpha + epsilon} <= failure_prob.
    """
    if (gamma is None) == (b_dens is None):
        raise ValueError("give exactly one of gamma or b_dens")
    if b <= 0:
        raise ValueError("b must be positive")
    ratio = b / gamma if gamma is not None else b * b_dens
    m = max(1, math.ceil(ratio ** -0.5))
    k = min(n, m)
    delta = math.exp(-math.sqrt(k))
    base = 3.0 / (4.0 * k) ** 0.25
    if gamma is not None:
        s = (2.0 * m * b / gamma) ** (1.0 / 3.0)
        eps = base + 2.0 * s
    else:
        s = (2.0 * b_dens * m * b) ** 0.25
        eps = base + 4.0 * s
    return AsymptoticStep(n, m, delta, eps, 3.0 * delta + s)


def best_bound(
    theorem: str,
    alpha: float,
    n: int,
    m_values: Iterable[int],
    delta_values: Iterable[float],
    beta_of_m: Callable[[int], float],
    gamma_values: Iterable[float] = (None,),
    b_dens: float | None = None,
) -> BoundReport:
    """Smallest threshold + failure_prob over a user-supplied candidate grid."""
    best = None
    for m, delta, gamma in itertools.product(list(m_values), list(delta_values), list(gamma_values)):
        rep = evaluate_bound(
            theorem,
            BoundInputs(alpha=alpha, delta=delta, n=n, m=m, beta=beta_of_m(m), gamma=gamma, b_dens=b_dens),
        )
        if best is None or rep.threshold + rep.failure_prob < best.threshold + best.failure_prob:
            best = rep
    if best is None:
        raise ValueError("empty candidate grid")
    return best
