"""Vehicular asynchronous federated learning with DDPG-driven vehicle selection."""
from .config import ConfigError, SimConfig, from_dict, load_config

__all__ = ["ConfigError", "SimConfig", "from_dict", "load_config"]
__version__ = "0.1.0"
