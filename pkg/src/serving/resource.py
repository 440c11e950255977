"""Cost model: iteration latency as a function of batch contents and SM share.

Latencies are first computed at 100% of the SMs (``l100``), divided by the
tensor-parallel speedup, and then scaled to the granted share with
``scaled_latency``: l_x = (100 / x) * l100.
"""

import math
from collections.abc import Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PartitionConfig(BaseModel):
    """SM percentages granted to the prefill (x) and decode (y) workers."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    x: float = Field(gt=0, le=100)
    y: float = Field(gt=0, le=100)

    def normalized(self) -> tuple[float, float]:
        """(x', y') in percent, i.e. each share of the total x + y."""
        total = self.x + self.y
        return 100.0 * self.x / total, 100.0 * self.y / total

    def label(self) -> str:
        return f"({self.x:g}, {self.y:g})"


class CostParams(BaseModel):
    """Additive work model. Times in seconds; defaults give a ~40 ms prefill of
    251 tokens and a ~30 ms decode iteration of 64 sequences at 100% SMs."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    l100_prefill_base: float = Field(default=0.005, ge=0)
    prefill_per_token: float = Field(default=1.4e-4, ge=0)
    prefill_attn_quad: float = Field(default=0.0, ge=0)
    decode_base: float = Field(default=0.012, ge=0)
    decode_per_seq: float = Field(default=2.0e-4, ge=0)
    decode_per_kv_token: float = Field(default=2.3e-7, ge=0)
    kv_bytes_per_token: int = Field(default=131072, ge=1)
    gpu_count: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_work_terms(self) -> "CostParams":
        work = (
            self.prefill_per_token,
            self.prefill_attn_quad,
            self.decode_per_seq,
            self.decode_per_kv_token,
        )
        if not any(w > 0 for w in work):
            raise ValueError("at least one per-work coefficient must be positive")
        return self


class ParallelismConfig(BaseModel):
    """Tensor/pipeline degrees per phase and the TP efficiency per doubling."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tp_prefill: int = Field(default=1, ge=1)
    tp_decode: int = Field(default=1, ge=1)
    pp_prefill: int = Field(default=1, ge=1)
    pp_decode: int = Field(default=1, ge=1)
    tp_efficiency: float = Field(default=0.9, gt=0, le=1)

    @property
    def symmetric(self) -> bool:
        return self.tp_prefill == self.tp_decode and self.pp_prefill == self.pp_decode

    def gpus(self, phase: str) -> int:
        if phase == "prefill":
            return self.tp_prefill * self.pp_prefill
        return self.tp_decode * self.pp_decode


def scaled_latency(l100: float, share: float) -> float:
    """Latency at ``share`` percent of the SMs given the latency at 100%."""
    if share <= 0:
        raise ValueError(f"share must be positive, got {share}")
    if l100 < 0:
        raise ValueError(f"l100 must be non-negative, got {l100}")
    return (100.0 / share) * l100


def effective_shares(p: PartitionConfig) -> tuple[float, float]:
    """Shares actually obtained when both workers compete.

    Oversubscribed partitions (x + y > 100) are scaled down proportionally.
    """
    total = p.x + p.y
    if total <= 100:
        return p.x, p.y
    return 100.0 * p.x / total, 100.0 * p.y / total


def tp_speedup(tp: int, efficiency: float) -> float:
    """tp * efficiency^log2(tp); ideal halving per doubling when efficiency is 1."""
    if tp < 1:
        raise ValueError(f"tp must be >= 1, got {tp}")
    return tp * efficiency ** math.log2(tp)


def prefill_l100(batch_tokens: Sequence[int], c: CostParams) -> float:
    """Prefill work of a batch at 100% SMs on one GPU."""
    total = sum(batch_tokens)
    squares = sum(t * t for t in batch_tokens)
    return c.l100_prefill_base + c.prefill_per_token * total + c.prefill_attn_quad * squares


def decode_l100(kv_lens: Sequence[int], c: CostParams) -> float:
    """Decode work of a batch at 100% SMs on one GPU."""
    return c.decode_base + c.decode_per_seq * len(kv_lens) + c.decode_per_kv_token * sum(kv_lens)


def prefill_iter_latency(
    batch_tokens: Sequence[int], c: CostParams, par: ParallelismConfig, share: float
) -> float:
    """Latency of one prefill iteration over per-request token counts."""
    if not batch_tokens:
        raise ValueError("prefill batch is empty")
    l100 = prefill_l100(batch_tokens, c) / tp_speedup(par.tp_prefill, par.tp_efficiency)
    return scaled_latency(l100, share)


def decode_iter_latency(
    kv_lens: Sequence[int], c: CostParams, par: ParallelismConfig, share: float
) -> float:
    """Latency of one decode iteration over per-sequence attended KV lengths."""
    if not kv_lens:
        raise ValueError("decode batch is empty")
    l100 = decode_l100(kv_lens, c) / tp_speedup(par.tp_decode, par.tp_efficiency)
    return scaled_latency(l100, share)


def mixed_iter_latency(
    chunk_tokens: Sequence[int],
    kv_lens: Sequence[int],
    c: CostParams,
    par: ParallelismConfig,
    share: float,
) -> float:
    """Latency of a chunked iteration that piggy-backs decode tokens on prefill chunks.

    One fixed overhead is paid (the larger of the two bases) plus the work terms
    of both parts.
    """
    if not chunk_tokens and not kv_lens:
        raise ValueError("mixed batch is empty")
    if not chunk_tokens:
        return decode_iter_latency(kv_lens, c, par, share)
    if not kv_lens:
        return prefill_iter_latency(chunk_tokens, c, par, share)
    work = (
        prefill_l100(chunk_tokens, c)
        - c.l100_prefill_base
        + decode_l100(kv_lens, c)
        - c.decode_base
        + max(c.l100_prefill_base, c.decode_base)
    )
    return scaled_latency(work / tp_speedup(par.tp_prefill, par.tp_efficiency), share)
