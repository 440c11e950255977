"""Disaggregated serving: separate prefill and decode instances with KV transfer.

Every instance owns its GPUs, its copy of the weights and its own KV pool. A
finished prefill is sent to the least-loaded decode instance; its prefill-side
blocks are released once the transfer completes.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Any

from core.events import EventKind, EventQueue, SimEvent

from ..kv import KvPool, blocks_for_tokens
from ..resource import CostParams, ParallelismConfig, decode_iter_latency, prefill_iter_latency
from .base import Engine, EngineConfig, Iteration, KvSizing, RequestRecord, Worker
from .router import route_request

FULL_SHARE = 100.0


class Instance:
    """One prefill or decode instance: a worker, a pool and its queues."""

    def __init__(self, name: str, phase: str, slots: int, pool: KvPool):
        self.name = name
        self.worker = Worker(name, phase, slots)
        self.pool = pool
        self.waiting: deque[RequestRecord] = deque()
        self.running: list[RequestRecord] = []
        self.incoming = 0

    def queue_depth(self) -> int:
        return len(self.waiting) + self.incoming

    def kv_utilization(self) -> float:
        return self.pool.utilization()


@dataclass(eq=False)
class Transfer:
    """KV cache of one request on its way to a decode instance."""

    owner: "DisaggregatedEngine"
    rec: RequestRecord
    target: Instance
    delay: float

    @property
    def audit_id(self) -> str:
        return f"{self.owner.name}/transfer/{self.rec.id}->{self.target.name}"


class DisaggregatedEngine(Engine):
    """xPyD disaggregation, 1P1D by default."""

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
        self.prefill_instances = [
            self._instance(f"prefill{i}", "prefill", kv.prefill_capacity_blocks)
            for i in range(cfg.prefill_instances)
        ]
        self.decode_instances = [
            self._instance(f"decode{i}", "decode", kv.decode_capacity_blocks)
            for i in range(cfg.decode_instances)
        ]
        self._by_worker = {inst.worker: inst for inst in self.prefill_instances + self.decode_instances}
        self._prefill_home: dict[int, Instance] = {}
        self.transfers = 0

    def _instance(self, label: str, phase: str, override: int | None) -> Instance:
        name = f"{self.name}/{label}"
        capacity = self.kv.capacity(self.par.gpus(phase), self.cost.kv_bytes_per_token, override, name)
        slots = self.par.pp_prefill if phase == "prefill" else self.par.pp_decode
        return Instance(label, phase, slots, KvPool(capacity, self.kv.block_size, name=name))

    def pools(self) -> list[KvPool]:
        return [inst.pool for inst in self.prefill_instances + self.decode_instances]

    def queue_depth(self) -> int:
        return sum(len(inst.waiting) for inst in self.prefill_instances)

    def gpu_count(self) -> int:
        return len(self.prefill_instances) * self.par.gpus("prefill") + len(
            self.decode_instances
        ) * self.par.gpus("decode")

    def audit(self) -> dict[str, Any]:
        return {"transfers": self.transfers}

    def _enqueue(self, rec: RequestRecord) -> None:
        self.prefill_instances[route_request(self.prefill_instances)].waiting.append(rec)

    def _requeue_prefill(self, rec: RequestRecord) -> None:
        self.prefill_instances[route_request(self.prefill_instances)].waiting.appendleft(rec)

    def transfer_delay(self, rec: RequestRecord) -> float:
        """Time to move ``rec``'s resident KV cache to a decode instance."""
        transfer = self.cfg.transfer
        if transfer.mode == "bandwidth":
            assert transfer.bandwidth is not None
            return rec.kv_tokens * self.cost.kv_bytes_per_token / transfer.bandwidth
        return decode_iter_latency([rec.kv_tokens], self.cost, self.par, FULL_SHARE)

    def schedule(self) -> None:
        for inst in self.prefill_instances:
            while inst.worker.has_free_slot():
                batch = self._take_prefill_batch(inst.waiting, inst.pool)
                if not batch:
                    break
                for rec, _ in batch:
                    self._prefill_home[rec.id] = inst
                latency = prefill_iter_latency([t for _, t in batch], self.cost, self.par, FULL_SHARE)
                self._start(inst.worker, batch, [], latency, FULL_SHARE)
        for inst in self.decode_instances:
            self._admit_transferred(inst)
            while inst.worker.has_free_slot():
                batch = self._build_decode_batch(inst.running, deque(), inst.pool, self._requeue_prefill)
                if not batch:
                    break
                latency = decode_iter_latency([r.kv_tokens for r in batch], self.cost, self.par, FULL_SHARE)
                self._start(inst.worker, [], batch, latency, FULL_SHARE)

    def _admit_transferred(self, inst: Instance) -> None:
        """Pull transferred requests into the running set, FCFS, while the decode pool has room."""
        while inst.waiting and len(inst.running) < self.cfg.max_batch_size:
            rec = inst.waiting[0]
            need = blocks_for_tokens(rec.kv_tokens, inst.pool.block_size) - inst.pool.held(rec.id)
            if need > 0 and not inst.pool.try_allocate(rec.id, need, self.now):
                break
            inst.waiting.popleft()
            inst.running.append(rec)

    def _on_iteration_complete(self, it: Iteration) -> None:
        inst = self._by_worker[it.worker]
        for rec, tokens in it.prefill:
            self._finish_prefill(rec, tokens)
            if rec.finished():
                self._prefill_home.pop(rec.id)
                self._complete(rec, inst.pool)
            else:
                self._send(rec)
        for rec in it.decode:
            rec.generated += 1
            if rec.finished():
                inst.running.remove(rec)
                self._complete(rec, inst.pool)

    def _send(self, rec: RequestRecord) -> None:
        target = self.decode_instances[route_request(self.decode_instances)]
        delay = self.transfer_delay(rec)
        rec.transfer_delay += delay
        target.incoming += 1
        self.transfers += 1
        self.queue.schedule_in(delay, EventKind.TRANSFER_COMPLETE, Transfer(self, rec, target, delay))

    def _on_event(self, event: SimEvent) -> None:
        if event.kind is not EventKind.TRANSFER_COMPLETE:
            super()._on_event(event)
            return
        transfer: Transfer = event.payload
        self._prefill_home.pop(transfer.rec.id).pool.release(transfer.rec.id)
        transfer.target.incoming -= 1
        transfer.target.waiting.append(transfer.rec)
        logging.debug(f"{self.name}: request {transfer.rec.id} reached {transfer.target.name} at t={self.now:.6f}")
