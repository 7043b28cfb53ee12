"""Siamese corner-voting tracker built on a small numpy autodiff engine."""

from .config import Config, load_config, toy_config
from .network import Network
from .tracker import Tracker

__version__ = "0.1.0"
__all__ = ["Config", "Network", "Tracker", "load_config", "toy_config"]
