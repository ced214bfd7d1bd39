"""Calculators for the convergence theory: learning-rate window, bound, round count.

Note that the learning-rate window is empty for every admissible input:
``sqrt(1 + x) - 1 < x / 2`` makes the second upper-bound branch strictly
smaller than half the lower bound. :func:`lr_window` still evaluates it
faithfully; :func:`convergence_bound` only requires ``m1 > 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import model as model_mod


class TheoremHypothesisError(ValueError):
    pass


@dataclass(frozen=True)
class TheoryConstants:
    """Inputs to the bound.

    Attributes:
        L: Smoothness constant of every local objective.
        zeta: Bound on stochastic-gradient deviation.
        kappa: Bound on local-vs-global gradient deviation.
        rho: Squared second-largest eigenvalue magnitude of the mixing matrix.
        alpha, gamma: Momentum coefficient and learning rate.
        sigma: Noise standard deviation.
        clip_c: Clipping threshold.
        d: Parameter dimension.
        m: Number of agents.
        omega_min: Smallest positive mixing weight.
        f_gap: ``F(x_bar^0) - F*``.
    """

    L: float = 1.0
    zeta: float = 0.0
    kappa: float = 0.0
    rho: float = 0.0
    alpha: float = 0.5
    gamma: float = 0.001
    sigma: float = 0.0
    clip_c: float = 1.0
    d: int = 1
    m: int = 1
    omega_min: float = 1.0
    f_gap: float = 1.0

    def __post_init__(self):
        for name in ("L", "zeta", "kappa", "gamma", "sigma", "clip_c", "d", "m", "f_gap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not 0.0 < self.omega_min <= 1.0:
            raise ValueError("omega_min must lie in (0, 1]")
        if self.m < 1:
            raise ValueError("m must be at least 1")

    def with_(self, **kw) -> TheoryConstants:
        return replace(self, **kw)


@dataclass(frozen=True)
class LrBounds:
    lower: float
    upper: float
    reason: str = ""

    @property
    def window(self) -> tuple[float, float] | None:
        if self.reason or not self.lower < self.upper:
            return None
        return (self.lower, self.upper)


def lr_bounds(c: TheoryConstants) -> LrBounds:
    """Both ends of the admissible learning-rate interval, whether or not it is empty."""
    a, L = c.alpha, c.L
    gap = 1.0 - math.sqrt(c.rho)
    if a == 0:
        return LrBounds(math.inf, math.nan, "alpha = 0 leaves the lower bound undefined")
    if L <= 0:
        return LrBounds((1 - a) ** 2 / a, math.nan, "L must be positive")
    lower = (1 - a) ** 2 / a
    if gap == 0:
        return LrBounds(lower, 0.0, "rho = 1 collapses the upper bound to 0")
    first = (1 - a) * gap / (2 * math.sqrt(26) * L)
    inner = 52 * L**2 * (1 - a) ** 2 / (a**2 * gap**2) + 1
    second = a * gap**2 / (2 * math.sqrt(13) * L) ** 2 * (-1 + math.sqrt(inner))
    return LrBounds(lower, min(first, second))


def lr_window(c: TheoryConstants) -> tuple[float, float] | None:
    """``(lower, upper)`` if some learning rate satisfies the hypothesis, else ``None``."""
    return lr_bounds(c).window


def bound_constants(c: TheoryConstants) -> dict[str, float]:
    a, g, L = c.alpha, c.gamma, c.L
    if a == 0:
        raise TheoremHypothesisError("theorem hypothesis violated: alpha = 0")
    m1 = g / (2 * (1 - a)) - (1 - a) / (2 * a)
    if not m1 > 0:
        raise TheoremHypothesisError(f"theorem hypothesis violated: m1 = {m1:.6g} <= 0")
    return {
        "m1": m1,
        "m2": (a * L * g**2 / (2 * (1 - a) ** 3) + L * g**2 / (2 * (1 - a) ** 2)) / m1,
        "m3": L * (1 - a) / (2 * m1 * a),
        "m4": a * g**2 / (2 * m1 * (1 - a) ** 3),
        "m5": L**2 * g / (2 * m1 * (1 - a)),
    }


def bound_terms(c: TheoryConstants, T: int) -> dict[str, float]:
    """The three additive pieces of the bound: ``transient`` (the 1/T part),
    ``noise_floor`` and ``consensus``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    k = bound_constants(c)
    a, g = c.alpha, c.gamma
    w4 = c.omega_min**4
    gap = 1.0 - math.sqrt(c.rho)
    if gap == 0:
        raise TheoremHypothesisError("theorem hypothesis violated: rho = 1")
    noise = c.sigma**2 * c.d
    floor_mult = k["m2"] + k["m3"] * g**2 * a**2 / (1 - a) ** 4 + k["m4"]
    floor_base = 4 * c.clip_c**2 / w4 + 4 * noise / w4 + 2 * c.zeta**2 / c.m
    denom = (1 - a) ** 2 * gap**2
    consensus = k["m5"] * (
        16 * g**2 * (c.clip_c**2 + noise) / (w4 * denom) + 4 * g**2 * (7 * c.zeta**2 + 13 * c.kappa**2) / denom
    )
    return {
        "transient": c.f_gap / (k["m1"] * T),
        "noise_floor": floor_mult * floor_base,
        "consensus": consensus,
    }


def convergence_bound(c: TheoryConstants, T: int) -> float:
    """Upper bound on the average squared gradient norm of the mean model over T rounds."""
    return math.fsum(bound_terms(c, T).values())


def min_rounds(c: TheoryConstants) -> int | float:
    """Smallest T meeting both conditions of the round-count requirement.

    Returns ``math.inf`` when the requirement is unbounded (``rho -> 1``
    or a vanishing denominator).
    """
    a, L = c.alpha, c.L
    gap = 1.0 - math.sqrt(c.rho)
    if gap <= 0:
        return math.inf
    first = 104 * L**2 / ((1 - a) ** 2 * gap**2)
    den = (gap * math.sqrt(52 * L**2 * (1 - a) ** 2 + a**2 * gap**2) - a * gap**2) ** 2
    if den == 0:
        return math.inf
    second = 52**2 * L**4 / den
    worst = max(first, second)
    if not math.isfinite(worst) or worst > 2**62:
        return math.inf
    return math.ceil(worst)


def estimate_smoothness(spec, params, features, labels, rng, pairs: int = 64, radius: float = 1.0) -> float:
    """Largest observed ``|grad(x) - grad(y)| / |x - y|`` over random pairs near ``params``.

    This is a lower bound on the true smoothness constant, not an estimate
    with any guarantee.
    """
    params = np.asarray(params, dtype=np.float64)
    best = 0.0
    for _ in range(pairs):
        x = params + radius * rng.standard_normal(params.shape)
        y = params + radius * rng.standard_normal(params.shape)
        _, gx = model_mod.loss_and_grad(spec, x, features, labels)
        _, gy = model_mod.loss_and_grad(spec, y, features, labels)
        dist = float(np.linalg.norm(x - y))
        if dist > 0:
            best = max(best, float(np.linalg.norm(gx - gy)) / dist)
    return best
