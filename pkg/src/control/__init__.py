"""Dynamic partition control: latency model, fitting and the adjustment loop."""

from .controller import ControllerConfig, PartitionController, adjust_partition, observe_window
from .fitting import (
    LatencyModel,
    Observation,
    estimate_tpot,
    estimate_ttft,
    fit_latency_model,
    fit_tpot,
    fit_ttft,
)
from .queueing import mm1_sojourn, simulate_mm1

__all__ = [
    "ControllerConfig",
    "LatencyModel",
    "Observation",
    "PartitionController",
    "adjust_partition",
    "estimate_tpot",
    "estimate_ttft",
    "fit_latency_model",
    "fit_tpot",
    "fit_ttft",
    "mm1_sojourn",
    "observe_window",
    "simulate_mm1",
]
