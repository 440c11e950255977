"""Serving model: cost model, KV pool and the serving engines."""

from .kv import KvContractError, KvPool, KvPoolError, blocks_for_tokens
from .resource import (
    CostParams,
    ParallelismConfig,
    PartitionConfig,
    decode_iter_latency,
    effective_shares,
    mixed_iter_latency,
    prefill_iter_latency,
    scaled_latency,
    tp_speedup,
)

__all__ = [
    "CostParams",
    "KvContractError",
    "KvPool",
    "KvPoolError",
    "ParallelismConfig",
    "PartitionConfig",
    "blocks_for_tokens",
    "decode_iter_latency",
    "effective_shares",
    "mixed_iter_latency",
    "prefill_iter_latency",
    "scaled_latency",
    "tp_speedup",
]
