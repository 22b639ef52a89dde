"""Discrete-event simulation of multi-stage cargo-screening pipelines."""

from .analysis import ReplicationSet, RunCounters, detection_fraction, run_replications, summarize
from .engine import Simulation, run_until
from .fastpath import FastSimulation
from .oracle import (
    AnalyticNet,
    analytic_detection,
    concavity_check,
    outcome_tree_detection,
    scenario_detection,
)
from .scenario import Scenario, load_scenario, scenario_from_dict

__all__ = [
    "AnalyticNet",
    "FastSimulation",
    "ReplicationSet",
    "RunCounters",
    "Scenario",
    "Simulation",
    "analytic_detection",
    "concavity_check",
    "detection_fraction",
    "load_scenario",
    "outcome_tree_detection",
    "run_replications",
    "run_until",
    "scenario_detection",
    "scenario_from_dict",
    "summarize",
]

__version__ = "0.1.0"
