"""Experiment harness: scenario files, runs, sweeps and comparisons."""

from .runner import RunError, RunResult, ScenarioRunner, run_scenario, write_run
from .scenario import ScenarioConfig, ScenarioError, load_scenario, parse_scenario
from .sweep import compare, goodput_sweep, run_many, sweep

__all__ = [
    "RunError",
    "RunResult",
    "ScenarioConfig",
    "ScenarioError",
    "ScenarioRunner",
    "compare",
    "goodput_sweep",
    "load_scenario",
    "parse_scenario",
    "run_many",
    "run_scenario",
    "sweep",
    "write_run",
]
