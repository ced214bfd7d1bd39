"""Round-synchronous simulation of PDSL and the DP-DPSGD baseline.

All agents read the round-start snapshot of every model and momentum
buffer; the new state is committed in one step at the end of the round.
Randomness is drawn from keyed substreams (see :mod:`pdsl.rng`), so a run
is bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .data import LabeledDataset
from .model import ModelSpec
from .privacy import clip_gradient, gaussian_perturb
from .rng import substream
from .shapley import (
    DEFAULT_EXACT_CAP,
    CoalitionContext,
    ShapleyReport,
    aggregation_weights,
    exact_shapley,
    mc_shapley,
    normalize_shapley,
)
from .topology import CommGraph

log = logging.getLogger(__name__)

ALGOS = ("pdsl", "dpsgd")
ESTIMATORS = ("exact", "mc", "mc_exhaustive")


class EngineError(RuntimeError):
    pass


class NonFiniteError(EngineError):
    def __init__(self, agent: int, step: str, round_t: int):
        super().__init__(f"round {round_t}: non-finite value at agent {agent} during {step}")
        self.agent = agent
        self.step = step
        self.round = round_t


class InvariantViolation(EngineError):
    pass


@dataclass
class EngineConfig:
    """Knobs of the round loop.

    ``mc_r=None`` uses ``4 * |M_i|`` permutations per agent and round.
    ``shapley="mc_exhaustive"`` averages over every permutation, which is
    exact and exists for cross-checking the estimators.
    """

    alpha: float = 0.5
    gamma: float = 0.05
    batch_size: int = 32
    clip_c: float = 1.0
    sigma: float = 0.0
    shapley: str = "exact"
    mc_r: int | None = None
    exact_cap: int = DEFAULT_EXACT_CAP
    convex_weights: bool = False
    phi_min: float | None = None
    workers: int = 1
    seed: int = 0
    check_invariants: bool = True
    invariant_tol: float = 1e-9

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.gamma >= 0 or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite and non-negative, got {self.gamma}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.clip_c > 0:
            raise ValueError("clip_c must be positive")
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite and non-negative")
        if self.shapley not in ESTIMATORS:
            raise ValueError(f"shapley must be one of {ESTIMATORS}")
        if self.mc_r is not None and self.mc_r < 1:
            raise ValueError("mc_r must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class AgentState:
    id: int
    x: np.ndarray
    u: np.ndarray
    shard: np.ndarray


@dataclass
class RoundArtifacts:
    round: int
    perturbed: dict = field(default_factory=dict)  # (source j, target i) -> g_hat_{j,i}
    raw_norms: dict = field(default_factory=dict)  # (j, i) -> norm before clipping
    clipped_norms: dict = field(default_factory=dict)  # (j, i) -> norm after clipping, before noise
    candidates: dict = field(default_factory=dict)  # i -> {j: x_{i,j}}
    reports: dict = field(default_factory=dict)  # i -> ShapleyReport
    g_bar: np.ndarray | None = None
    u_hat: np.ndarray | None = None
    x_hat: np.ndarray | None = None
    ubar_residual: float = 0.0
    xbar_residual: float = 0.0

    @property
    def min_phi_share(self) -> float:
        if not self.reports:
            return math.nan
        return min(r.min_share for r in self.reports.values())

    @property
    def mean_grad_norm(self) -> float:
        return math.fsum(self.raw_norms.values()) / len(self.raw_norms)


@dataclass
class RoundMetrics:
    round: int
    global_loss: float
    avg_local_loss: float
    test_accuracy: float
    mean_grad_norm: float
    min_phi_share: float
    sigma_used: float


class _BatchSampler:
    """Walks a shard in reshuffled epochs; each epoch's order is a keyed substream."""

    def __init__(self, seed: int, agent: int, shard: np.ndarray):
        self.seed, self.agent, self.shard = seed, agent, shard
        self.epoch = -1
        self.order = np.empty(0, dtype=np.int64)
        self.pos = 0

    def next(self, b: int) -> np.ndarray:
        b = min(b, self.shard.size)
        out = []
        while len(out) < b:
            if self.pos == self.order.size:
                self.epoch += 1
                self.order = substream(self.seed, "batch", self.agent, self.epoch).permutation(self.shard)
                self.pos = 0
            take = min(b - len(out), self.order.size - self.pos)
            out.extend(self.order[self.pos:self.pos + take].tolist())
            self.pos += take
        return np.array(out, dtype=np.int64)


class Simulation:
    """Agents, their data, and the shared graph for one training run.

    Args:
        graph: Communication graph.
        spec: Model architecture shared by all agents.
        train: Training pool; ``shards`` index into it.
        shards: One nonempty index array per agent.
        validation: Shared validation set used by the Shapley game.
        test: Held-out set for ``test_accuracy`` (defaults to ``validation``).
        config: Engine settings.
        x0: Common initial point. Drawn from ``N(0, 0.01^2)`` with the
            ``"init"`` substream when omitted.
    """

    def __init__(self, graph: CommGraph, spec: ModelSpec, train: LabeledDataset, shards,
                 validation: LabeledDataset, config: EngineConfig, test: LabeledDataset | None = None,
                 x0=None):
        if len(shards) != graph.m:
            raise ValueError(f"{len(shards)} shards for {graph.m} agents")
        if any(len(s) == 0 for s in shards):
            raise ValueError("every agent needs a nonempty shard")
        if train.dim != spec.input_dim or validation.dim != spec.input_dim:
            raise ValueError("dataset feature dimension does not match the model")
        self.graph = graph
        self.spec = spec
        self.train = train
        self.validation = validation
        self.test = test if test is not None else validation
        self.config = config
        if x0 is None:
            x0 = model_mod.init_params(spec, substream(config.seed, "init"))
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (spec.dim,):
            raise ValueError(f"x0 must have shape ({spec.dim},)")
        self.agents = [
            AgentState(i, x0.copy(), np.zeros(spec.dim), np.asarray(shards[i], dtype=np.int64))
            for i in range(graph.m)
        ]
        self._samplers = [_BatchSampler(config.seed, a.id, a.shard) for a in self.agents]
        self.t = 0
        self.phi_floor_violations = 0

    # -- helpers -----------------------------------------------------------

    def _map(self, fn, items):
        if self.config.workers == 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def _perturbed_gradient(self, t, source, target, x, batch_x, batch_y):
        """Gradient of ``source``'s batch loss at model ``x``, clipped then noised."""
        cfg = self.config
        _, g = model_mod.loss_and_grad(self.spec, x, batch_x, batch_y)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(source, f"gradient for agent {target}", t)
        raw = float(np.linalg.norm(g))
        clipped = clip_gradient(g, cfg.clip_c)
        noisy = gaussian_perturb(clipped, cfg.sigma, substream(cfg.seed, "noise", t, source, target))
        return noisy, raw, float(np.linalg.norm(clipped))

    def _snapshot(self):
        return (np.stack([a.x for a in self.agents]), np.stack([a.u for a in self.agents]))

    def mean_model(self) -> np.ndarray:
        return np.mean([a.x for a in self.agents], axis=0)

    # -- rounds ------------------------------------------------------------

    def pdsl_round(self) -> RoundArtifacts:
        cfg, g = self.config, self.graph
        t = self.t + 1
        X, U = self._snapshot()
        batches = [self._samplers[a.id].next(cfg.batch_size) for a in self.agents]
        art = RoundArtifacts(round=t)

        # each agent j computes g_hat_{j,i} at every neighbor model x_i on its own batch
        def produce(j):
            bx, by = self.train.features[batches[j]], self.train.labels[batches[j]]
            return {(j, i): self._perturbed_gradient(t, j, i, X[i], bx, by) for i in g.neighbors[j]}

        for out in self._map(produce, range(g.m)):
            for key, (noisy, raw, clipped) in out.items():
                art.perturbed[key] = noisy
                art.raw_norms[key] = raw
                art.clipped_norms[key] = clipped

        def aggregate(i):
            nbrs = g.neighbors[i]
            cand = {j: X[i] - cfg.gamma * art.perturbed[(j, i)] for j in nbrs}
            game = CoalitionContext(cand, self.validation.features, self.validation.labels, self.spec)
            if cfg.shapley == "exact":
                raw, est = exact_shapley(game, cap=cfg.exact_cap), "exact"
            elif cfg.shapley == "mc_exhaustive":
                raw, est = mc_shapley(game, 1, exhaustive=True), f"mc({math.factorial(len(nbrs))})"
            else:
                r = cfg.mc_r if cfg.mc_r is not None else 4 * len(nbrs)
                raw, est = mc_shapley(game, r, substream(cfg.seed, "shapley", t, i)), f"mc({r})"
            phi_hat = normalize_shapley(raw)
            pi = aggregation_weights(phi_hat, g, i, convex=cfg.convex_weights)
            g_bar = np.zeros(self.spec.dim)
            for j in nbrs:
                g_bar += pi[j] * art.perturbed[(j, i)]
            u_hat = cfg.alpha * U[i] + g_bar
            x_hat = X[i] - cfg.gamma * u_hat
            for step, arr in (("aggregation", g_bar), ("momentum", u_hat), ("model update", x_hat)):
                if not np.all(np.isfinite(arr)):
                    raise NonFiniteError(i, step, t)
            return cand, ShapleyReport(raw, phi_hat, pi, est), g_bar, u_hat, x_hat

        results = self._map(aggregate, range(g.m))
        art.candidates = {i: r[0] for i, r in enumerate(results)}
        art.reports = {i: r[1] for i, r in enumerate(results)}
        art.g_bar = np.stack([r[2] for r in results])
        art.u_hat = np.stack([r[3] for r in results])
        art.x_hat = np.stack([r[4] for r in results])

        # barrier: gossip the intermediate momentum and model
        U_new = g.weights @ art.u_hat
        X_new = g.weights @ art.x_hat
        self._commit(t, X_new, U_new)

        art.ubar_residual = float(np.abs(U_new.mean(0) - (cfg.alpha * U.mean(0) + art.g_bar.mean(0))).max())
        art.xbar_residual = float(np.abs(X_new.mean(0) - (X.mean(0) - cfg.gamma * U_new.mean(0))).max())
        if cfg.check_invariants:
            worst = max(art.ubar_residual, art.xbar_residual)
            if worst > cfg.invariant_tol:
                raise InvariantViolation(
                    f"round {t}: mean recursion residuals u={art.ubar_residual:.3g}, x={art.xbar_residual:.3g}"
                )
        if cfg.phi_min is not None and art.min_phi_share < cfg.phi_min:
            self.phi_floor_violations += 1
        return art

    def dpsgd_round(self) -> RoundArtifacts:
        """Each agent mixes neighbor models and steps along its own noisy gradient."""
        cfg, g = self.config, self.graph
        t = self.t + 1
        X, U = self._snapshot()
        batches = [self._samplers[a.id].next(cfg.batch_size) for a in self.agents]
        art = RoundArtifacts(round=t)

        def step(i):
            bx, by = self.train.features[batches[i]], self.train.labels[batches[i]]
            return self._perturbed_gradient(t, i, i, X[i], bx, by)

        for i, (noisy, raw, clipped) in enumerate(self._map(step, range(g.m))):
            art.perturbed[(i, i)] = noisy
            art.raw_norms[(i, i)] = raw
            art.clipped_norms[(i, i)] = clipped
        G = np.stack([art.perturbed[(i, i)] for i in range(g.m)])
        X_new = g.weights @ X - cfg.gamma * G
        for i in range(g.m):
            if not np.all(np.isfinite(X_new[i])):
                raise NonFiniteError(i, "model update", t)
        self._commit(t, X_new, U)
        return art

    def _commit(self, t, X_new, U_new):
        for i, a in enumerate(self.agents):
            a.x = X_new[i].copy()
            a.u = U_new[i].copy()
        self.t = t

    # -- driver ------------------------------------------------------------

    def metrics(self, art: RoundArtifacts) -> RoundMetrics:
        xbar = self.mean_model()
        spec, tr = self.spec, self.train
        local = [model_mod.loss(spec, a.x, tr.features[a.shard], tr.labels[a.shard]) for a in self.agents]
        return RoundMetrics(
            round=art.round,
            global_loss=model_mod.loss(spec, xbar, tr.features, tr.labels),
            avg_local_loss=math.fsum(local) / len(local),
            test_accuracy=model_mod.accuracy(spec, xbar, self.test.features, self.test.labels),
            mean_grad_norm=art.mean_grad_norm,
            min_phi_share=art.min_phi_share,
            sigma_used=self.config.sigma,
        )

    def run(self, rounds: int, algo: str = "pdsl", on_round=None) -> list[RoundMetrics]:
        """Run ``rounds`` rounds and return one :class:`RoundMetrics` per round.

        ``on_round(metrics, artifacts)`` is called after every round.
        """
        if rounds < 1:
            raise ValueError("need at least one round")
        if algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        step = self.pdsl_round if algo == "pdsl" else self.dpsgd_round
        history = []
        for _ in range(rounds):
            art = step()
            m = self.metrics(art)
            history.append(m)
            if on_round is not None:
                on_round(m, art)
        if algo == "pdsl" and self.phi_floor_violations:
            log.warning(
                "realized minimum Shapley share fell below phi_min=%g in %d of %d rounds",
                self.config.phi_min, self.phi_floor_violations, rounds,
            )
        return history


def run_training(sim: Simulation, rounds: int, algo: str = "pdsl") -> list[RoundMetrics]:
    return sim.run(rounds, algo)
