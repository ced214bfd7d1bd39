"""Privacy-preserved decentralized stochastic learning (PDSL) simulator."""

from .engine import EngineConfig, RoundMetrics, Simulation, run_training
from .experiment import RunConfig, load_config, run_experiment
from .topology import CommGraph, build_topology, spectral_info

__all__ = [
    "CommGraph",
    "EngineConfig",
    "RoundMetrics",
    "RunConfig",
    "Simulation",
    "build_topology",
    "load_config",
    "run_experiment",
    "run_training",
    "spectral_info",
]
__version__ = "0.1.0"
