"""Gradient clipping, the Gaussian mechanism, and per-round noise calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import CommGraph

_CLIP_MARGIN = 8 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class DpConfig:
    """Privacy parameters for one run.

    Attributes:
        epsilon: Per-round privacy budget, > 0.
        delta: Failure probability, in (0, 1).
        clip_c: Clipping threshold C, > 0 (``inf`` disables clipping).
        sigma: Noise standard deviation. ``None`` means "calibrate".
        phi_min: Assumed lower bound on each neighbor's normalized Shapley
            share, in (0, 1]. ``None`` means ``1 / max_i |M_i|``.
    """

    epsilon: float = 1.0
    delta: float = 1e-5
    clip_c: float = 1.0
    sigma: float | None = None
    phi_min: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0 or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.clip_c > 0:
            raise ValueError(f"clip_c must be positive, got {self.clip_c}")
        if self.sigma is not None and not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and non-negative, got {self.sigma}")
        if self.phi_min is not None and not 0.0 < self.phi_min <= 1.0:
            raise ValueError(f"phi_min must lie in (0, 1], got {self.phi_min}")

    def resolve_sigma(self, graph: CommGraph) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return calibrate_sigma(graph, self.epsilon, self.delta, self.clip_c, self.resolve_phi_min(graph))

    def resolve_phi_min(self, graph: CommGraph) -> float:
        return self.phi_min if self.phi_min is not None else default_phi_min(graph)


def clip_gradient(g, c: float) -> np.ndarray:
    """Scale ``g`` down to norm ``c`` if it is longer; otherwise return it as is."""
    if not c > 0:
        raise ValueError(f"clipping threshold must be positive, got {c}")
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("cannot clip a non-finite gradient")
    norm = float(np.linalg.norm(g))
    if norm <= c:
        return g.copy()
    # aim a few ulps under c: norm routines (nrm2, sqrt of a dot, batched
    # axis norms) disagree in the last bits, and the bound must hold for all
    target = c * (1.0 - _CLIP_MARGIN)
    out = g * (target / norm)
    over = float(np.linalg.norm(out))
    while over > target:
        out *= np.nextafter(target / over, 0.0)
        over = float(np.linalg.norm(out))
    return out


def gaussian_perturb(g, sigma: float, rng) -> np.ndarray:
    """Return ``g + n`` with ``n ~ N(0, sigma^2 I)`` drawn from ``rng``."""
    if not sigma >= 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    g = np.asarray(g, dtype=np.float64)
    if sigma == 0:
        return g.copy()
    return g + sigma * rng.standard_normal(g.shape)


def default_phi_min(graph: CommGraph) -> float:
    return 1.0 / graph.max_neighborhood


def sensitivity_bound(graph: CommGraph, agent: int, c: float) -> float:
    """L2-sensitivity bound of agent ``agent``'s aggregated, clipped gradient:
    ``2C/omega_min + sum_{j in M_i} 2C/omega_ij``."""
    if not c > 0:
        raise ValueError("clipping threshold must be positive")
    row = graph.weights[agent, list(graph.neighbors[agent])]
    return 2.0 * c / graph.omega_min + float(np.sum(2.0 * c / row))


def agent_sigmas(graph: CommGraph, epsilon: float, delta: float, clip_c: float, phi_min: float) -> np.ndarray:
    """Per-agent noise level that makes that agent's round (epsilon, delta)-DP."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not math.isfinite(clip_c) or not clip_c > 0:
        raise ValueError("calibration needs a finite positive clipping threshold")
    if phi_min == 0:
        raise ValueError("phi_min = 0 makes the noise bound diverge; configure a positive floor")
    if not 0.0 < phi_min <= 1.0:
        raise ValueError(f"phi_min must lie in (0, 1], got {phi_min}")
    gauss = math.sqrt(2.0 * math.log(1.25 / delta))
    out = np.empty(graph.m)
    for i in range(graph.m):
        row = graph.weights[i, list(graph.neighbors[i])]
        spread = math.sqrt(float(np.sum(row**-2.0)))
        out[i] = sensitivity_bound(graph, i, clip_c) * gauss / (phi_min * epsilon * spread)
    return out


def calibrate_sigma(graph: CommGraph, epsilon: float, delta: float, clip_c: float, phi_min: float) -> float:
    """Smallest sigma giving per-round (epsilon, delta)-DP at every agent."""
    return float(agent_sigmas(graph, epsilon, delta, clip_c, phi_min).max())
