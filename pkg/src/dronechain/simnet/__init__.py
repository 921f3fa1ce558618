"""Seeded discrete-event simulator for ground-station and drone fleets."""

from .metrics import MetricsReport, diff_reports
from .runner import Simulation, SimulationError, run_scenario
from .scenario import FAULTS, Scenario, ScenarioError, inject_fault, load_scenario, parse_scenario

__all__ = [
    "FAULTS",
    "MetricsReport",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "SimulationError",
    "inject_fault",
    "load_scenario",
    "parse_scenario",
    "diff_reports",
    "run_scenario",
]
