"""Movable-antenna aided secure RIS-ISAC beamforming simulator."""

from .channel import ChannelSet, Scenario, load_scenario, sample_scenario
from .linalg import SolverOptions
from .metrics import AuxVariables, DesignVariables, MetricReport
from .optimizer import RunOptions, RunResult, run

__all__ = [
    "ChannelSet", "Scenario", "load_scenario", "sample_scenario",
    "SolverOptions", "AuxVariables", "DesignVariables", "MetricReport",
    "RunOptions", "RunResult", "run",
]

__version__ = "0.1.0"
