"""Latency SLOs: configuration, shipped presets and derivation from unloaded latency."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from serving.resource import CostParams, ParallelismConfig, decode_iter_latency, prefill_iter_latency

TIGHT_FACTOR = 7.5
LOOSE_FACTOR = 10.0

# (TTFT, TPOT) seconds per model/dataset/tightness
SLO_PRESETS: dict[str, tuple[float, float]] = {
    "llama3-8b/sharegpt/tight": (0.3, 0.15),
    "llama3-8b/sharegpt/loose": (0.4, 0.2),
    "llama3-8b/longbench/tight": (2.25, 0.13),
    "llama3-8b/longbench/loose": (3.0, 0.18),
    "llama3-70b/sharegpt/tight": (0.85, 0.3),
    "llama3-70b/sharegpt/loose": (1.1, 0.4),
    "llama3-70b/longbench/tight": (6.0, 0.3),
    "llama3-70b/longbench/loose": (8.0, 0.4),
}
DEFAULT_SLO_PRESET = "llama3-8b/sharegpt/tight"


class SloConfig(BaseModel):
    """TTFT/TPOT bounds and the percentile of requests that must meet them."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    ttft_slo: float = Field(gt=0, description="seconds")
    tpot_slo: float = Field(gt=0, description="seconds")
    percentile: float = Field(default=0.9, gt=0, le=1)


def slo_preset(name: str, percentile: float = 0.9) -> SloConfig:
    """Shipped SLO by name, e.g. ``llama3-8b/sharegpt/tight``.

    Raises:
        ValueError: For an unknown preset
    """
    if name not in SLO_PRESETS:
        raise ValueError(f"unknown SLO preset {name!r}; choose one of: {', '.join(SLO_PRESETS)}")
    ttft, tpot = SLO_PRESETS[name]
    return SloConfig(ttft_slo=ttft, tpot_slo=tpot, percentile=percentile)


def derive_slo(
    cost: CostParams,
    par: ParallelismConfig,
    input_len: int,
    output_len: int,
    factor: float,
    percentile: float = 0.9,
) -> SloConfig:
    """Scale the latency of a single request on an idle system by ``factor``.

    TTFT is one prefill of ``input_len`` tokens; TPOT averages the decode steps
    as the context grows from ``input_len + 1`` to ``input_len + output_len - 1``.
    """
    if input_len < 1 or output_len < 1:
        raise ValueError("input_len and output_len must be >= 1")
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    ttft = prefill_iter_latency([input_len], cost, par, 100.0)
    steps = range(1, max(output_len, 2))
    tpot = float(np.mean([decode_iter_latency([input_len + k], cost, par, 100.0) for k in steps]))
    return SloConfig(ttft_slo=factor * ttft, tpot_slo=factor * tpot, percentile=percentile)
