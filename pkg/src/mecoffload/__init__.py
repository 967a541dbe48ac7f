"""Energy-aware multi-server mobile edge computing with multi-agent DQN offloading."""

from .config import ConfigError, SimConfig
from .kernels import BACKEND
from .sim import EnvState, Metrics, finalize_metrics, init_episode, observe, step

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "EnvState", "Metrics", "SimConfig",
    "finalize_metrics", "init_episode", "observe", "step",
]
