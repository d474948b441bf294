"""Configuration, scenarios, the time loop with AMR/limiting, and outputs."""

from .config import SimulationConfig, parse_config, parse_config_file
from .loop import RunReport, run

__all__ = ["SimulationConfig", "parse_config", "parse_config_file", "RunReport", "run"]
