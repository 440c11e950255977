"""Unified engines: both phases share one GPU and run one after the other."""

from collections import deque

from core.events import EventQueue

from ..kv import KvPool, blocks_for_tokens
from ..resource import (
    CostParams,
    ParallelismConfig,
    decode_iter_latency,
    mixed_iter_latency,
    prefill_iter_latency,
)
from .base import Engine, EngineConfig, Iteration, KvSizing, RequestRecord, Worker, require_symmetric

FULL_SHARE = 100.0


class UnifiedEngine(Engine):
    """Prefill-first (``unified-pf``) or decode-first (``unified-df``) unified serving."""

    def __init__(
        self,
        cfg: EngineConfig,
        cost: CostParams,
        par: ParallelismConfig,
        kv: KvSizing,
        queue: EventQueue,
        name: str | None = None,
    ):
        super().__init__(cfg, cost, par, kv, queue, name)
        require_symmetric(par, cfg.kind)
        capacity = kv.capacity(self.gpu_count(), cost.kv_bytes_per_token, None, self.name)
        self.pool = KvPool(capacity, kv.block_size, name=f"{self.name}/kv")
        self.gpu = Worker("gpu", "unified", par.pp_prefill)
        self.waiting: deque[RequestRecord] = deque()
        self.decode_waiting: deque[RequestRecord] = deque()
        self.running: list[RequestRecord] = []
        self.prefer_decode = cfg.kind == "unified-df"

    def _enqueue(self, rec: RequestRecord) -> None:
        self.waiting.append(rec)

    def pools(self) -> list[KvPool]:
        return [self.pool]

    def queue_depth(self) -> int:
        return len(self.waiting)

    def gpu_count(self) -> int:
        return self.par.gpus("prefill")

    def schedule(self) -> None:
        while self.gpu.has_free_slot():
            if not self._start_next():
                break

    def _start_next(self) -> bool:
        if self.prefer_decode:
            return self._try_decode() or self._try_prefill()
        return self._try_prefill() or self._try_decode()

    def _try_prefill(self) -> bool:
        batch = self._take_prefill_batch(self.waiting, self.pool)
        if not batch:
            return False
        latency = prefill_iter_latency([t for _, t in batch], self.cost, self.par, FULL_SHARE)
        self._start(self.gpu, batch, [], latency, FULL_SHARE)
        return True

    def _try_decode(self) -> bool:
        batch = self._build_decode_batch(self.running, self.decode_waiting, self.pool, self.waiting.appendleft)
        if not batch:
            return False
        kv_lens = [r.kv_tokens for r in batch]
        latency = decode_iter_latency(kv_lens, self.cost, self.par, FULL_SHARE)
        self._start(self.gpu, [], batch, latency, FULL_SHARE)
        return True

    def _on_iteration_complete(self, it: Iteration) -> None:
        for rec, tokens in it.prefill:
            self._finish_prefill(rec, tokens)
            if rec.finished():
                self._complete(rec, self.pool)
            else:
                self.decode_waiting.append(rec)
        self._advance_decode(it.decode)

    def _advance_decode(self, batch: list[RequestRecord]) -> None:
        for rec in batch:
            rec.generated += 1
            if rec.finished():
                self.running.remove(rec)
                self._complete(rec, self.pool)


class ChunkedEngine(UnifiedEngine):
    """Chunked prefill: decode tokens ride along with one prefill chunk per iteration."""

    def _start_next(self) -> bool:
        budget = self.cfg.chunk_size
        decode = self._build_decode_batch(
            self.running, self.decode_waiting, self.pool, self.waiting.appendleft, limit=budget
        )
        chunk = self._next_chunk(budget - len(decode))
        if not decode and not chunk:
            return False
        chunk_tokens = [n for _, n in chunk]
        kv_lens = [r.kv_tokens for r in decode]
        latency = mixed_iter_latency(chunk_tokens, kv_lens, self.cost, self.par, FULL_SHARE)
        self._start(self.gpu, chunk, decode, latency, FULL_SHARE)
        return True

    def _next_chunk(self, budget: int) -> list[tuple[RequestRecord, int]]:
        if budget <= 0 or not self.waiting:
            return []
        head = self.waiting[0]
        if head.in_flight:
            return []
        need = blocks_for_tokens(head.context_len, self.pool.block_size) - self.pool.held(head.id)
        if need > 0 and not self.pool.try_allocate(head.id, need, self.now):
            return []
        return [(head, min(budget, head.context_len - head.prefill_progress))]

    def _on_iteration_complete(self, it: Iteration) -> None:
        for rec, n in it.prefill:
            rec.prefill_progress += n
            if rec.prefill_progress < rec.context_len:
                continue
            self.waiting.remove(rec)
            self._finish_prefill(rec, rec.context_len)
            if rec.finished():
                self._complete(rec, self.pool)
            else:
                self.decode_waiting.append(rec)
        self._advance_decode(it.decode)
