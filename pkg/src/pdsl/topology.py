"""Communication graphs with symmetric doubly stochastic mixing weights."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components

KINDS = ("full", "ring", "bipartite")
STOCHASTIC_TOL = 1e-12


class TopologyError(ValueError):
    """Raised for an invalid topology request or an invalid mixing matrix."""


class Check(NamedTuple):
    name: str
    passed: bool
    residual: float


@dataclass(frozen=True)
class SpectralInfo:
    rho: float
    eigenvalues: np.ndarray  # sorted, largest first


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Agents ``0..m-1`` and their mixing matrix.

    ``neighbors[i]`` lists every ``j`` with ``weights[i, j] > 0`` in
    increasing order, so it always contains ``i`` itself.
    """

    weights: np.ndarray
    kind: str = "custom"
    neighbors: tuple = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise TopologyError(f"mixing matrix must be square and non-empty, got shape {w.shape}")
        failed = [c for c in validate(w) if not c.passed]
        if failed:
            desc = ", ".join(f"{c.name} (residual {c.residual:.3g})" for c in failed)
            raise TopologyError(f"invalid mixing matrix: {desc}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        nbrs = tuple(tuple(int(j) for j in np.flatnonzero(w[i] > 0)) for i in range(w.shape[0]))
        object.__setattr__(self, "neighbors", nbrs)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def omega_min(self) -> float:
        """Smallest positive weight over all agents and their neighbors."""
        return float(self.weights[self.weights > 0].min())

    @property
    def max_neighborhood(self) -> int:
        return max(len(n) for n in self.neighbors)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for row in self.weights:
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write("\n")
        return buf.getvalue()


def build_topology(kind: str, m: int) -> CommGraph:
    """Build one of the standard topologies over ``m`` agents.

    Weight rules:
      * ``full``: every entry ``1/m``.
      * ``ring``: ``1/3`` on self and the two ring neighbors.
      * ``bipartite``: complete bipartite graph between agents
        ``0..m/2-1`` and ``m/2..m-1`` with Metropolis-Hastings weights
        ``1/(1 + max(d_i, d_j))`` on edges and the remaining mass on the
        diagonal.
    """
    if kind not in KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool):
        raise TopologyError(f"agent count must be an integer, got {m!r}")
    m = int(m)
    if m < 1:
        raise TopologyError("agent count must be at least 1")

    if kind == "full":
        w = np.full((m, m), 1.0 / m)
    elif kind == "ring":
        if m < 3:
            raise TopologyError("ring topology needs at least 3 agents")
        w = np.zeros((m, m))
        third = 1.0 / 3.0
        for i in range(m):
            w[i, i] = third
            w[i, (i - 1) % m] = third
            w[i, (i + 1) % m] = third
    else:
        if m < 2 or m % 2:
            raise TopologyError("bipartite topology needs an even agent count of at least 2")
        half = m // 2
        adj = np.zeros((m, m), dtype=bool)
        adj[:half, half:] = True
        adj[half:, :half] = True
        deg = adj.sum(axis=1)
        w = np.zeros((m, m))
        for i in range(m):
            for j in np.flatnonzero(adj[i]):
                w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        # diagonal gets whatever mass the edges leave
        for i in range(m):
            w[i, i] = 1.0 - w[i].sum()
    return CommGraph(w, kind=kind)


def validate(g) -> list[Check]:
    """Check the mixing-matrix invariants of a graph or raw matrix.

    Never raises on a bad matrix; each check reports its measured residual.
    """
    w = np.asarray(g.weights if isinstance(g, CommGraph) else g, dtype=np.float64)
    checks = []
    square = w.ndim == 2 and w.shape[0] == w.shape[1] and w.shape[0] >= 1
    checks.append(Check("square", square, 0.0 if square else float("inf")))
    if not square:
        return checks
    m = w.shape[0]

    finite = bool(np.all(np.isfinite(w)))
    checks.append(Check("finite", finite, 0.0 if finite else float("inf")))
    if not finite:
        return checks

    below = float(max(0.0, -w.min()))
    above = float(max(0.0, w.max() - 1.0))
    checks.append(Check("range", below == 0.0 and above == 0.0, max(below, above)))

    asym = float(np.abs(w - w.T).max())
    checks.append(Check("symmetric", asym == 0.0, asym))

    stoch = float(max(np.abs(w.sum(axis=1) - 1.0).max(), np.abs(w.sum(axis=0) - 1.0).max()))
    checks.append(Check("doubly_stochastic", stoch <= STOCHASTIC_TOL, stoch))

    diag_min = float(np.diag(w).min())
    checks.append(Check("self_weight", diag_min > 0.0, max(0.0, -diag_min)))

    if m > 1:
        off = (w > 0) | (w.T > 0)
        np.fill_diagonal(off, False)
        n_comp, _ = connected_components(off, directed=False)
        checks.append(Check("connected", n_comp == 1, float(n_comp - 1)))
    else:
        checks.append(Check("connected", True, 0.0))
    return checks


def spectral_info(g: CommGraph) -> SpectralInfo:
    """Eigenvalues of the mixing matrix and ``rho = max(|l2|, |l_m|)**2``."""
    lam = np.sort(np.linalg.eigvalsh(g.weights))[::-1]
    if g.m == 1:
        return SpectralInfo(rho=0.0, eigenvalues=lam)
    second = max(abs(lam[1]), abs(lam[-1]))
    return SpectralInfo(rho=float(second**2), eigenvalues=lam)
