"""Neighbor-credit game: coalition values, Shapley values, aggregation weights.

A *game* here is anything with a ``players`` tuple and a ``value(mask)``
method, where ``mask`` is an integer bitmask over ``players`` (bit ``k`` set
means ``players[k]`` is in the coalition). ``value(0)`` must be 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .model import ModelSpec
from .topology import CommGraph

DEFAULT_EXACT_CAP = 12


class ShapleyCapError(ValueError):
    """Exact enumeration was requested for too many players."""


class _MemoGame:
    def __init__(self, players):
        self.players = tuple(players)
        if not self.players:
            raise ValueError("a game needs at least one player")
        if len(set(self.players)) != len(self.players):
            raise ValueError("players must be distinct")
        self._index = {p: k for k, p in enumerate(self.players)}
        self._memo = {0: 0.0}
        self.evaluations = 0

    @property
    def n(self) -> int:
        return len(self.players)

    def mask_of(self, subset) -> int:
        mask = 0
        for p in subset:
            try:
                mask |= 1 << self._index[p]
            except KeyError:
                raise ValueError(f"{p!r} is not a player of this game") from None
        return mask

    def value(self, mask: int) -> float:
        v = self._memo.get(mask)
        if v is None:
            v = float(self._evaluate(mask))
            self._memo[mask] = v
            self.evaluations += 1
        return v

    def _evaluate(self, mask: int) -> float:
        raise NotImplementedError


class TabularGame(_MemoGame):
    """Game defined by an explicit ``{frozenset(coalition): value}`` table.

    Coalitions missing from the table are worth ``default``; the empty
    coalition is always worth 0.
    """

    def __init__(self, players, table, default: float = 0.0):
        super().__init__(players)
        self._table = {self.mask_of(k): float(v) for k, v in table.items() if k}
        self._default = default

    def _evaluate(self, mask):
        return self._table.get(mask, self._default)


class CoalitionContext(_MemoGame):
    """Validation accuracy of averaged candidate models.

    ``candidates`` maps each neighbor id to its candidate parameter vector.
    A coalition is worth the accuracy on the validation set of the plain
    mean of its members' candidates.
    """

    def __init__(self, candidates: dict, val_features, val_labels, spec: ModelSpec):
        super().__init__(candidates.keys())
        vecs = [np.asarray(candidates[p], dtype=np.float64) for p in self.players]
        if any(v.shape != (spec.dim,) for v in vecs):
            raise ValueError(f"every candidate must have dimension {spec.dim}")
        self._stack = np.stack(vecs)
        self._features = val_features
        self._labels = val_labels
        self.spec = spec

    def _evaluate(self, mask):
        members = [k for k in range(self.n) if mask >> k & 1]
        x = self._stack[members].mean(axis=0)
        return model_mod.accuracy(self.spec, x, self._features, self._labels)


def coalition_value(game, subset) -> float:
    return game.value(game.mask_of(subset))


def exact_shapley(game, cap: int = DEFAULT_EXACT_CAP) -> dict:
    """Shapley values by enumerating every coalition (memoized)."""
    n = game.n
    if n > cap:
        raise ShapleyCapError(
            f"{n} players exceeds the exact-enumeration cap of {cap}; use mc_shapley instead"
        )
    values = np.array([game.value(mask) for mask in range(1 << n)])
    sizes = np.array([bin(mask).count("1") for mask in range(1 << n)])
    # weight of a coalition of size s not containing the player
    weight = np.array([1.0 / (n * math.comb(n - 1, s)) for s in range(n)])
    phi = {}
    for k, player in enumerate(game.players):
        bit = 1 << k
        without = np.array([mask for mask in range(1 << n) if not mask & bit], dtype=np.int64)
        marg = values[without | bit] - values[without]
        phi[player] = float(np.sum(weight[sizes[without]] * marg))
    return phi


def mc_shapley(game, r: int, rng=None, exhaustive: bool = False) -> dict:
    """Permutation-sampling Shapley estimate.

    Draws ``r`` uniform permutations of the players; each player is credited
    with ``v(predecessors + self) - v(predecessors)``, and credits are
    averaged over the ``r`` permutations.

    With ``exhaustive=True`` every permutation is used exactly once instead
    of sampling (``r`` and ``rng`` are then ignored); the result equals the
    exact Shapley value.
    """
    n = game.n
    if exhaustive:
        perms = itertools.permutations(range(n))
        r = math.factorial(n)
    else:
        if r < 1:
            raise ValueError(f"need at least one permutation, got r={r}")
        if rng is None:
            raise ValueError("sampling needs an rng")
        perms = (rng.permutation(n) for _ in range(r))

    totals = np.zeros(n)
    for perm in perms:
        mask, prev = 0, game.value(0)
        for k in perm:
            mask |= 1 << int(k)
            cur = game.value(mask)
            totals[k] += cur - prev
            prev = cur
    return {p: float(totals[k] / r) for k, p in enumerate(game.players)}


def normalize_shapley(raw: dict) -> dict:
    """Min-max normalize to [0, 1]. If every value is equal, all become 1."""
    if not raw:
        raise ValueError("nothing to normalize")
    lo, hi = min(raw.values()), max(raw.values())
    if hi == lo:
        return {j: 1.0 for j in raw}
    span = hi - lo
    return {j: (v - lo) / span for j, v in raw.items()}


def aggregation_weights(phi_hat: dict, graph: CommGraph, agent: int, convex: bool = False) -> dict:
    """``pi_j = phi_hat_j / (omega_ij * sum_k phi_hat_k)``.

    With ``convex=True`` the weights are rescaled to sum to one.
    """
    total = math.fsum(phi_hat.values())
    if not total > 0:
        raise ValueError("normalized Shapley values must have a positive sum")
    w = graph.weights[agent]
    pi = {j: v / (w[j] * total) for j, v in phi_hat.items()}
    if convex:
        s = math.fsum(pi.values())
        pi = {j: v / s for j, v in pi.items()}
    return pi


def min_share(phi_hat: dict) -> float:
    """Smallest normalized share ``phi_hat_j / sum_k phi_hat_k``."""
    total = math.fsum(phi_hat.values())
    return min(phi_hat.values()) / total


@dataclass
class ShapleyReport:
    raw: dict
    normalized: dict
    weights: dict
    estimator: str

    @property
    def min_share(self) -> float:
        return min_share(self.normalized)
