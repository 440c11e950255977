"""Semi-PD serving: separate prefill and decode workers over one shared KV pool.

The two workers run asynchronously on SM partitions of the same GPUs. A worker
runs at its own cap (x or y) while the other one is idle and at its component
of ``effective_shares`` while both compete; the share of an iteration is fixed
when it starts.

Partition switches are delayed and asynchronous: after ``switch_prep_delay``
each worker adopts the new share at its next iteration boundary (or at once if
it is idle), so the two may briefly run one-old/one-new.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from core.events import EventKind, EventQueue, SimEvent

from ..kv import KvPool
from ..resource import (
    CostParams,
    ParallelismConfig,
    PartitionConfig,
    decode_iter_latency,
    decode_l100,
    effective_shares,
    prefill_iter_latency,
    tp_speedup,
)
from .base import Engine, EngineConfig, Iteration, KvSizing, RequestRecord, Worker, require_symmetric

if TYPE_CHECKING:
    from control.controller import PartitionController


@dataclass
class SwitchRecord:
    """Audit entry of one partition switch request."""

    token: int
    partition: PartitionConfig
    requested_at: float
    prepared_at: float | None = None
    superseded: bool = False
    adopted: dict[str, float] = field(default_factory=dict)

    @property
    def mixed_period(self) -> float | None:
        """Time the workers ran one-old/one-new, once both adopted."""
        if len(self.adopted) < 2:
            return None
        return abs(self.adopted["prefill"] - self.adopted["decode"])

    def to_dict(self) -> dict[str, Any]:
        return {
            "token": self.token,
            "x": self.partition.x,
            "y": self.partition.y,
            "requested_at": self.requested_at,
            "prepared_at": self.prepared_at,
            "superseded": self.superseded,
            "adopted": dict(self.adopted),
            "mixed_period": self.mixed_period,
        }


@dataclass(eq=False)
class SwitchTicket:
    owner: "SemiPDEngine"
    token: int
    partition: PartitionConfig

    @property
    def audit_id(self) -> str:
        return f"{self.owner.name}/switch#{self.token}"


@dataclass(eq=False)
class ControllerTick:
    owner: "SemiPDEngine"
    iteration: int

    @property
    def audit_id(self) -> str:
        return f"{self.owner.name}/tick@{self.iteration}"


class SemiPDEngine(Engine):
    """Disaggregated computation over unified storage.

    Args:
        controller: Optional dynamic partition controller, ticked every
            ``window_size`` completed decode iterations
    """

    def __init__(
        self,
        cfg: EngineConfig,
        cost: CostParams,
        par: ParallelismConfig,
        kv: KvSizing,
        queue: EventQueue,
        name: str | None = None,
        controller: "PartitionController | None" = None,
    ):
        super().__init__(cfg, cost, par, kv, queue, name)
        require_symmetric(par, cfg.kind)
        capacity = kv.capacity(self.gpu_count(), cost.kv_bytes_per_token, None, self.name)
        self.pool = KvPool(capacity, kv.block_size, name=f"{self.name}/kv")
        self.prefill_worker = Worker("prefill", "prefill", par.pp_prefill)
        self.decode_worker = Worker("decode", "decode", par.pp_decode)
        self.waiting: deque[RequestRecord] = deque()
        self.decode_waiting: deque[RequestRecord] = deque()
        self.running: list[RequestRecord] = []

        self.partition = cfg.initial_partition
        self.shares = {"prefill": cfg.initial_partition.x, "decode": cfg.initial_partition.y}
        self.switches: list[SwitchRecord] = []
        self._pending: dict[str, SwitchRecord] = {}
        self._stalled = False
        self.controller = controller

    def _enqueue(self, rec: RequestRecord) -> None:
        if self.controller is not None:
            self.controller.record_arrival(self.now)
        self.waiting.append(rec)

    def pools(self) -> list[KvPool]:
        return [self.pool]

    def queue_depth(self) -> int:
        return len(self.waiting)

    def gpu_count(self) -> int:
        return self.par.gpus("prefill")

    def in_effect(self) -> PartitionConfig:
        """Partition the workers are currently running with."""
        return PartitionConfig(x=self.shares["prefill"], y=self.shares["decode"])

    def _share(self, phase: str, other_busy: bool) -> float:
        if not other_busy:
            return self.shares[phase]
        x, y = effective_shares(self.in_effect())
        return x if phase == "prefill" else y

    def schedule(self) -> None:
        if self._stalled:
            return
        prefill_batches = []
        while len(self.prefill_worker.in_flight) + len(prefill_batches) < self.prefill_worker.slots:
            batch = self._take_prefill_batch(self.waiting, self.pool)
            if not batch:
                break
            prefill_batches.append(batch)
        decode_batches = []
        while len(self.decode_worker.in_flight) + len(decode_batches) < self.decode_worker.slots:
            batch = self._build_decode_batch(self.running, self.decode_waiting, self.pool, self.waiting.appendleft)
            if not batch:
                break
            # later batches must skip these sequences
            for rec in batch:
                rec.in_flight = True
            decode_batches.append(batch)

        decode_busy = self.decode_worker.busy or bool(decode_batches)
        prefill_busy = self.prefill_worker.busy or bool(prefill_batches)
        for batch in prefill_batches:
            share = self._share("prefill", decode_busy)
            latency = prefill_iter_latency([t for _, t in batch], self.cost, self.par, share)
            self._start(self.prefill_worker, batch, [], latency, share)
        for decode in decode_batches:
            share = self._share("decode", prefill_busy)
            kv_lens = [r.kv_tokens for r in decode]
            latency = decode_iter_latency(kv_lens, self.cost, self.par, share)
            l100 = decode_l100(kv_lens, self.cost) / tp_speedup(self.par.tp_decode, self.par.tp_efficiency)
            self._start(self.decode_worker, [], decode, latency, share, l100)

    def _on_iteration_complete(self, it: Iteration) -> None:
        for rec, tokens in it.prefill:
            first = rec.prefill_done is None
            self._finish_prefill(rec, tokens)
            if first and self.controller is not None:
                self.controller.record_prefill(rec)
            if rec.finished():
                self._finish(rec)
            else:
                self.decode_waiting.append(rec)
        for rec in it.decode:
            rec.generated += 1
            if rec.finished():
                self.running.remove(rec)
                self._finish(rec)
        if it.decode and self.controller is not None:
            self.controller.record_decode_iteration(it.l100)
        self._adopt(it.worker.phase)
        if (
            it.decode
            and self.controller is not None
            and self.decode_iterations % self.controller.cfg.window_size == 0
        ):
            self.queue.schedule(self.now, EventKind.CONTROLLER_TICK, ControllerTick(self, self.decode_iterations))

    def _finish(self, rec: RequestRecord) -> None:
        self._complete(rec, self.pool)
        if self.controller is not None:
            self.controller.record_completion(rec)

    def request_switch(self, new: PartitionConfig) -> None:
        """Ask for a new partition; a newer request supersedes a pending one."""
        for pending in self.switches:
            if pending.prepared_at is None and not pending.superseded:
                pending.superseded = True
        token = len(self.switches)
        self.switches.append(SwitchRecord(token, new, self.now))
        self.partition = new
        if self.cfg.naive_switch:
            self._stalled = True
        self.queue.schedule_in(self.cfg.switch_prep_delay, EventKind.SWITCH_PREPARED, SwitchTicket(self, token, new))
        logging.debug(f"{self.name}: switch to {new.label()} requested at t={self.now:.6f}")

    def _on_event(self, event: SimEvent) -> None:
        if event.kind is EventKind.SWITCH_PREPARED:
            self._prepared(event.payload)
        elif event.kind is EventKind.CONTROLLER_TICK:
            self._controller_tick(event.payload)
        else:
            super()._on_event(event)

    def _prepared(self, ticket: SwitchTicket) -> None:
        record = self.switches[ticket.token]
        if record.superseded:
            return
        record.prepared_at = self.now
        self._stalled = False
        self._pending = {"prefill": record, "decode": record}
        for phase, worker in (("prefill", self.prefill_worker), ("decode", self.decode_worker)):
            if not worker.busy:
                self._adopt(phase)

    def _adopt(self, phase: str) -> None:
        record = self._pending.pop(phase, None)
        if record is None:
            return
        self.shares[phase] = record.partition.x if phase == "prefill" else record.partition.y
        record.adopted[phase] = self.now
        if self.controller is not None:
            self.controller.partition_changed(self.now, self.in_effect())
        logging.debug(f"{self.name}: {phase} worker adopted {record.partition.label()} at t={self.now:.6f}")

    def _controller_tick(self, tick: ControllerTick) -> None:
        assert self.controller is not None
        new = self.controller.on_tick(self.now, tick.iteration, self.partition)
        if new != self.partition:
            self.request_switch(new)

    def audit(self) -> dict[str, Any]:
        return {
            "switches": [s.to_dict() for s in self.switches],
            "final_partition": {"x": self.shares["prefill"], "y": self.shares["decode"]},
        }
