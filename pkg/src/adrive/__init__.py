"""Decentralized deadlock detection and recovery for automated vehicles at shared road segments."""

from .config import SimConfig, load_config
from .sim import RunResult, Simulation, run

__all__ = ["SimConfig", "load_config", "RunResult", "Simulation", "run"]
__version__ = "0.1.0"
