"""Named workload presets.

The means are engineering defaults chosen to resemble the public datasets;
only the ShareGPT input mean (251 tokens) and the 95/5 heterogeneous split
with ~4k-token irregular prompts come from published measurements.
"""

from typing import Any

from .trace import ConstantDist, LognormalDist, MixtureComponent, TraceParams

SHAREGPT_INPUT_MEAN = 251
IRREGULAR_INPUT_LEN = 4096


def _sharegpt_lengths() -> dict[str, Any]:
    return {
        "input_dist": LognormalDist.from_mean(SHAREGPT_INPUT_MEAN, sigma=0.8),
        "output_dist": LognormalDist.from_mean(200, sigma=0.8),
    }


def _longbench_lengths() -> dict[str, Any]:
    return {
        "input_dist": LognormalDist.from_mean(3000, sigma=0.4),
        "output_dist": LognormalDist.from_mean(200, sigma=0.6),
    }


def _math_lengths() -> dict[str, Any]:
    return {
        "input_dist": LognormalDist.from_mean(120, sigma=0.5),
        "output_dist": LognormalDist.from_mean(600, sigma=0.6),
    }


def _heterogeneous_lengths() -> dict[str, Any]:
    lengths = _sharegpt_lengths()
    lengths["mixture"] = [
        MixtureComponent(weight=0.95),
        MixtureComponent(weight=0.05, input_dist=ConstantDist(value=IRREGULAR_INPUT_LEN)),
    ]
    return lengths


PRESETS = {
    "sharegpt-like": _sharegpt_lengths,
    "longbench-like": _longbench_lengths,
    "math-like": _math_lengths,
    "heterogeneous": _heterogeneous_lengths,
}


def preset_params(name: str, rate: float, count: int, seed: int = 0, **overrides: Any) -> TraceParams:
    """Build ``TraceParams`` for a named preset.

    Args:
        name: One of ``PRESETS``
        rate: Requests per second
        count: Number of requests
        seed: Random seed
        overrides: Any other ``TraceParams`` field, applied last

    Raises:
        ValueError: For an unknown preset name
    """
    if name not in PRESETS:
        raise ValueError(f"unknown workload preset {name!r}; choose one of: {', '.join(PRESETS)}")
    fields = PRESETS[name]()
    fields.update(rate=rate, count=count, seed=seed)
    fields.update(overrides)
    return TraceParams(**fields)
