"""Request workloads: trace generation, presets and the trace CSV schema."""

from .presets import PRESETS, preset_params
from .trace import (
    ConstantDist,
    EmpiricalDist,
    LoadedTrace,
    LognormalDist,
    MixtureComponent,
    Request,
    TraceFormatError,
    TraceParams,
    UniformDist,
    generate_trace,
    load_trace,
    write_trace,
)

__all__ = [
    "PRESETS",
    "ConstantDist",
    "EmpiricalDist",
    "LoadedTrace",
    "LognormalDist",
    "MixtureComponent",
    "Request",
    "TraceFormatError",
    "TraceParams",
    "UniformDist",
    "generate_trace",
    "load_trace",
    "preset_params",
    "write_trace",
]
