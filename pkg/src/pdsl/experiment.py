"""Run configuration, experiment driver and metrics CSV output."""

from __future__ import annotations

import csv
import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import data
from .engine import ALGOS, EngineConfig, RoundMetrics, Simulation
from .model import MODEL_KINDS, ModelSpec
from .privacy import DpConfig
from .rng import substream
from .topology import KINDS, build_topology

CSV_COLUMNS = (
    "round",
    "global_loss",
    "avg_local_loss",
    "test_accuracy",
    "mean_grad_norm",
    "min_phi_share",
    "sigma_used",
)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class ConfigError(ValueError):
    pass


class UnknownKeyError(ConfigError):
    def __init__(self, key):
        super().__init__(f"unknown config key {key!r}")
        self.key = key


class ConfigRangeError(ConfigError):
    def __init__(self, key, value, expected):
        super().__init__(f"{key}={value!r} is out of range: expected {expected}")
        self.key = key


class MissingKeyError(ConfigError):
    def __init__(self, key, why):
        super().__init__(f"missing required key {key!r} ({why})")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    """One experiment. Every field has a runnable default.

    ``sigma=None`` calibrates the noise from ``epsilon``, ``delta``,
    ``clip`` and ``phi_min``; ``phi_min=None`` means ``1/max_i |M_i|``;
    ``mc_permutations=None`` means ``4 |M_i|`` per agent. The ``classes``
    through ``separation`` fields describe the synthetic dataset;
    ``mnist_dir`` must hold the four standard IDX files when
    ``dataset=mnist``.
    """

    dataset: str = "synth"
    topology: str = "ring"
    agents: int = 8
    rounds: int = 100
    batch: int = 32
    alpha: float = 0.5
    gamma: float = 0.05
    mu: float = 0.25
    epsilon: float = 1.0
    delta: float = 1e-5
    clip: float = 1.0
    sigma: float | None = None
    phi_min: float | None = None
    shapley: str = "exact"
    mc_permutations: int | None = None
    algo: str = "pdsl"
    seed: int = 0
    out: str = "metrics.csv"
    workers: int = 1
    model: str = "softmax_regression"
    hidden: int = 16
    classes: int = 3
    dim: int = 10
    n_train: int = 3000
    n_test: int = 1000
    separation: float = 3.0
    val_fraction: float = 0.2
    mnist_dir: str | None = None

    def __post_init__(self):
        def need(key, ok, expected):
            if not ok:
                raise ConfigRangeError(key, getattr(self, key), expected)

        need("dataset", self.dataset in ("synth", "mnist"), "synth or mnist")
        need("topology", self.topology in KINDS, " | ".join(KINDS))
        need("agents", self.agents >= 1, ">= 1")
        need("rounds", self.rounds >= 1, ">= 1")
        need("batch", self.batch >= 1, ">= 1")
        need("alpha", 0.0 <= self.alpha < 1.0, "[0, 1)")
        need("gamma", self.gamma >= 0 and math.isfinite(self.gamma), ">= 0")
        need("mu", self.mu > 0 and math.isfinite(self.mu), "> 0")
        need("epsilon", self.epsilon > 0 and math.isfinite(self.epsilon), "> 0")
        need("delta", 0.0 < self.delta < 1.0, "(0, 1)")
        need("clip", self.clip > 0, "> 0")
        need("sigma", self.sigma is None or (self.sigma >= 0 and math.isfinite(self.sigma)), ">= 0")
        need("phi_min", self.phi_min is None or 0.0 < self.phi_min <= 1.0, "(0, 1]")
        need("shapley", self.shapley in ("exact", "mc"), "exact or mc")
        need("mc_permutations", self.mc_permutations is None or self.mc_permutations >= 1, ">= 1")
        need("algo", self.algo in ALGOS, " | ".join(ALGOS))
        need("seed", self.seed >= 0, ">= 0")
        need("workers", self.workers >= 1, ">= 1")
        need("model", self.model in MODEL_KINDS, " | ".join(MODEL_KINDS))
        need("hidden", self.hidden >= 1, ">= 1")
        need("classes", self.classes >= 2, ">= 2")
        need("dim", self.dim >= 1, ">= 1")
        need("n_train", self.n_train >= max(self.classes, self.agents), ">= max(classes, agents)")
        need("n_test", self.n_test >= 2, ">= 2")
        need("separation", self.separation >= 0 and math.isfinite(self.separation), ">= 0")
        need("val_fraction", 0.0 < self.val_fraction < 1.0, "(0, 1)")
        if self.sigma is None and not math.isfinite(self.clip):
            raise ConfigRangeError("clip", self.clip, "finite when sigma is calibrated")
        if self.dataset == "mnist" and not self.mnist_dir:
            raise MissingKeyError("mnist_dir", "dataset=mnist needs the IDX file directory")


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_OPTIONAL = {"sigma", "phi_min", "mc_permutations", "mnist_dir"}


def _coerce(key: str, text: str):
    if key not in FIELDS:
        raise UnknownKeyError(key)
    if not isinstance(text, str):
        return text
    text = text.strip()
    if key in _OPTIONAL and text.lower() in ("", "none"):
        return None
    default = FIELDS[key].default
    kind = type(default) if default is not None else {"sigma": float, "phi_min": float,
                                                      "mc_permutations": int, "mnist_dir": str}[key]
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigRangeError(key, text, f"a {kind.__name__}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = _coerce(key, value)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated config from an optional file plus overrides (which win)."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for key, value in (overrides or {}).items():
        key = key.replace("-", "_")
        if value is None:
            if key not in FIELDS:
                raise UnknownKeyError(key)
            continue
        values[key] = _coerce(key, value)
    return RunConfig(**values)


def load_datasets(cfg: RunConfig):
    """Return ``(train, test)`` for the configured dataset."""
    if cfg.dataset == "synth":
        train = data.synth_classification(cfg.classes, cfg.dim, cfg.n_train, cfg.separation,
                                          substream(cfg.seed, "train"))
        test = data.synth_classification(cfg.classes, cfg.dim, cfg.n_test, cfg.separation,
                                         substream(cfg.seed, "test"))
        return train, test
    root = Path(cfg.mnist_dir)
    train = data.load_idx(root / MNIST_FILES["train_images"], root / MNIST_FILES["train_labels"])
    test = data.load_idx(root / MNIST_FILES["test_images"], root / MNIST_FILES["test_labels"],
                         y_count=train.y_count)
    return train, test


def build_simulation(cfg: RunConfig) -> Simulation:
    """Everything up to the first round. Independent of ``cfg.algo``, so PDSL
    and the baseline see the same data, partition and initial point."""
    graph = build_topology(cfg.topology, cfg.agents)
    train, test = load_datasets(cfg)
    validation, remainder = data.make_validation_split(test, cfg.val_fraction, substream(cfg.seed, "split"))
    shards = data.dirichlet_partition(train, cfg.agents, cfg.mu, substream(cfg.seed, "partition"))
    spec = ModelSpec(cfg.model, train.dim, train.y_count, cfg.hidden if cfg.model == "mlp1" else 0)
    dp = DpConfig(epsilon=cfg.epsilon, delta=cfg.delta, clip_c=cfg.clip, sigma=cfg.sigma, phi_min=cfg.phi_min)
    engine_cfg = EngineConfig(
        alpha=cfg.alpha,
        gamma=cfg.gamma,
        batch_size=cfg.batch,
        clip_c=cfg.clip,
        sigma=dp.resolve_sigma(graph),
        shapley=cfg.shapley,
        mc_r=cfg.mc_permutations,
        phi_min=dp.resolve_phi_min(graph),
        workers=cfg.workers,
        seed=cfg.seed,
    )
    return Simulation(graph, spec, train, shards, validation, engine_cfg, test=remainder)


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def metrics_row(m: RoundMetrics) -> list[str]:
    return [_fmt(getattr(m, col)) for col in CSV_COLUMNS]


def run_experiment(cfg: RunConfig, stream=None) -> list[RoundMetrics]:
    """Run ``cfg`` and write the per-round metrics CSV.

    Output goes to ``stream`` if given, else to ``cfg.out`` (``-`` is
    stdout). Rows are flushed as they are produced; on failure a
    ``# error: ...`` trailer line is written before the exception propagates.
    """
    if stream is not None:
        return _run_to(cfg, stream)
    if cfg.out == "-":
        return _run_to(cfg, sys.stdout)
    with open(cfg.out, "w", newline="", encoding="utf-8") as f:
        return _run_to(cfg, f)


def _run_to(cfg: RunConfig, f) -> list[RoundMetrics]:
    writer = csv.writer(f)
    writer.writerow(CSV_COLUMNS)
    f.flush()

    def emit(m, _art):
        writer.writerow(metrics_row(m))
        f.flush()

    try:
        sim = build_simulation(cfg)
        return sim.run(cfg.rounds, cfg.algo, on_round=emit)
    except Exception as exc:
        f.write(f"# error: {type(exc).__name__}: {exc}\r\n")
        f.flush()
        raise
