"""Building blocks shared by every serving engine.

An engine is a single-threaded state machine driven by the simulation event
queue: ``admit`` takes new requests, ``handle`` consumes the events the engine
scheduled itself, and ``schedule`` starts iterations on idle worker slots.
"""

import logging
from abc import ABC, abstractmethod
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.events import EventKind, EventQueue, SchedulingError, SimEvent
from workload.trace import Request

from ..kv import KvPool, blocks_for_tokens
from ..resource import CostParams, ParallelismConfig, PartitionConfig

EngineKind = Literal[
    "unified-pf",
    "unified-df",
    "unified-chunked",
    "disaggregated",
    "semi-pd",
    "cluster",
]


class DeploymentError(Exception):
    """Raised when an instance cannot hold its model weights."""

    pass


class TransferConfig(BaseModel):
    """How long moving a request's KV cache from prefill to decode takes."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Literal["bandwidth", "one-decode-iteration"] = "one-decode-iteration"
    bandwidth: float | None = Field(default=None, gt=0, description="bytes per second")

    @model_validator(mode="after")
    def _check_bandwidth(self) -> "TransferConfig":
        if self.mode == "bandwidth" and self.bandwidth is None:
            raise ValueError("bandwidth is required when mode is 'bandwidth'")
        return self


class EngineConfig(BaseModel):
    """Engine selection and scheduling knobs."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: EngineKind = "semi-pd"
    name: str | None = None
    max_batch_size: int = Field(default=512, ge=1)
    chunk_size: int = Field(default=1024, ge=1)
    transfer: TransferConfig = Field(default_factory=TransferConfig)
    switch_prep_delay: float = Field(default=0.5, ge=0)
    naive_switch: bool = False
    initial_partition: PartitionConfig = PartitionConfig(x=100, y=100)
    preemption: bool = True
    dynamic: bool = False
    prefill_instances: int = Field(default=1, ge=1)
    decode_instances: int = Field(default=1, ge=1)
    count: int = Field(default=1, ge=1)
    members: list["EngineConfig"] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_kind_options(self) -> "EngineConfig":
        if self.dynamic and self.kind != "semi-pd":
            raise ValueError("dynamic partitioning is only available for kind 'semi-pd'")
        if self.kind == "cluster":
            if not self.members:
                raise ValueError("a cluster needs at least one member")
            if any(m.kind == "cluster" for m in self.members):
                raise ValueError("cluster members cannot be clusters")
        elif self.members:
            raise ValueError(f"members are only allowed for kind 'cluster', not {self.kind!r}")
        return self

    @property
    def label(self) -> str:
        """Name used in reports and as the compare key."""
        if self.name:
            return self.name
        if self.kind == "semi-pd":
            if self.dynamic:
                return "semi-pd(dynamic)"
            p = self.initial_partition
            return f"semi-pd({p.x:g},{p.y:g})"
        if self.kind == "disaggregated":
            return f"disaggregated({self.prefill_instances}P{self.decode_instances}D)"
        if self.kind == "cluster":
            return "cluster(" + "+".join(f"{m.count}x{m.label}" for m in self.members) + ")"
        return self.kind


class KvSizing(BaseModel):
    """KV pool sizing: explicit block counts or derived from GPU memory."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    block_size: int = Field(default=16, ge=1)
    capacity_blocks: int | None = Field(default=None, ge=1)
    prefill_capacity_blocks: int | None = Field(default=None, ge=1)
    decode_capacity_blocks: int | None = Field(default=None, ge=1)
    gpu_mem_bytes: float = Field(default=80e9, gt=0)
    weight_bytes: float = Field(default=16e9, ge=0)

    def capacity(self, gpus: int, kv_bytes_per_token: int, override: int | None, label: str) -> int:
        """Block capacity of one instance.

        Args:
            gpus: GPUs backing the instance; weights are charged once per instance
            kv_bytes_per_token: Per-token KV footprint
            override: Explicit capacity, used as-is when set
            label: Instance name for error messages

        Raises:
            DeploymentError: If the weights leave no room for a single block
        """
        if override is not None:
            return override
        if self.capacity_blocks is not None:
            return self.capacity_blocks
        free_bytes = gpus * self.gpu_mem_bytes - self.weight_bytes
        blocks = int(free_bytes // (kv_bytes_per_token * self.block_size))
        if blocks < 1:
            raise DeploymentError(
                f"{label}: {self.weight_bytes:.3g} B of weights do not fit in "
                f"{gpus} GPU(s) x {self.gpu_mem_bytes:.3g} B"
            )
        return blocks


@dataclass(eq=False)
class RequestRecord:
    """A request plus everything that happened to it during the run."""

    request: Request
    first_scheduled: float | None = None
    prefill_done: float | None = None
    completed: float | None = None
    preemptions: int = 0
    transfer_delay: float = 0.0
    # scheduling state
    generated: int = 0
    kv_tokens: int = 0
    prefill_progress: int = 0
    in_flight: bool = field(default=False, repr=False)

    @property
    def id(self) -> int:
        return self.request.id

    @property
    def arrival(self) -> float:
        return self.request.arrival

    @property
    def input_len(self) -> int:
        return self.request.input_len

    @property
    def context_len(self) -> int:
        """Tokens a (re)compute prefill has to process."""
        return self.request.input_len + self.generated

    def finished(self) -> bool:
        """Completion check; the only reader of ``output_len`` during a run."""
        return self.generated >= self.request.output_len


class Worker:
    """One phase worker (or a unified GPU) with ``slots`` pipeline stages."""

    def __init__(self, name: str, phase: str, slots: int = 1):
        self.name = name
        self.phase = phase
        self.slots = slots
        self.in_flight: list["Iteration"] = []
        self.iterations = 0

    @property
    def busy(self) -> bool:
        return bool(self.in_flight)

    @property
    def busy_until(self) -> float:
        """End of the latest in-flight iteration; 0 when idle."""
        return max((it.end for it in self.in_flight), default=0.0)

    def has_free_slot(self) -> bool:
        return len(self.in_flight) < self.slots


@dataclass(eq=False)
class Iteration:
    """One batch running on a worker; the payload of ITERATION_COMPLETE."""

    owner: "Engine"
    worker: Worker
    prefill: list[tuple[RequestRecord, int]]
    decode: list[RequestRecord]
    start: float
    latency: float
    share: float
    index: int
    l100: float = 0.0

    @property
    def end(self) -> float:
        return self.start + self.latency

    @property
    def audit_id(self) -> str:
        return f"{self.owner.name}/{self.worker.name}#{self.index}"


class Engine(ABC):
    """Base class of all serving designs.

    Args:
        cfg: Engine configuration
        cost: Cost model parameters
        par: Parallelism degrees
        kv: KV pool sizing
        queue: Event queue shared with the simulation driver
        name: Report name; defaults to the configuration label
    """

    def __init__(
        self,
        cfg: EngineConfig,
        cost: CostParams,
        par: ParallelismConfig,
        kv: KvSizing,
        queue: EventQueue,
        name: str | None = None,
    ):
        self.cfg = cfg
        self.cost = cost
        self.par = par
        self.kv = kv
        self.queue = queue
        self.name = name or cfg.label
        self.records: dict[int, RequestRecord] = {}
        self.decode_iterations = 0
        self._iteration_index = 0

    @property
    def now(self) -> float:
        return self.queue.now

    def admit(self, request: Request) -> RequestRecord:
        """Place a request that arrives now in the prefill waiting queue."""
        if request.arrival != self.now:
            raise SchedulingError(f"request {request.id} arrives at {request.arrival}, now is {self.now}")
        rec = RequestRecord(request)
        self.records[request.id] = rec
        self._enqueue(rec)
        self.schedule()
        return rec

    def handle(self, event: SimEvent) -> None:
        """Consume an event this engine scheduled, then start whatever can run."""
        if event.kind is EventKind.ITERATION_COMPLETE:
            it: Iteration = event.payload
            it.worker.in_flight.remove(it)
            it.worker.iterations += 1
            for rec, _ in it.prefill:
                rec.in_flight = False
            for rec in it.decode:
                rec.in_flight = False
            if it.decode:
                self.decode_iterations += 1
            self._on_iteration_complete(it)
        else:
            self._on_event(event)
        self.schedule()

    @abstractmethod
    def _enqueue(self, rec: RequestRecord) -> None:
        """Put a newly admitted request in the right waiting queue."""

    @abstractmethod
    def schedule(self) -> None:
        """Start iterations on every idle slot that has schedulable work."""

    @abstractmethod
    def _on_iteration_complete(self, it: Iteration) -> None:
        """Advance the requests of a finished iteration."""

    def _on_event(self, event: SimEvent) -> None:
        raise SchedulingError(f"{self.name}: unexpected event {event.kind.value}")

    @abstractmethod
    def pools(self) -> list[KvPool]:
        """Every KV pool owned by the engine."""

    @abstractmethod
    def queue_depth(self) -> int:
        """Requests waiting for a worker, used for routing."""

    @abstractmethod
    def gpu_count(self) -> int:
        """GPUs the engine occupies."""

    def kv_utilization(self) -> float:
        pools = self.pools()
        return sum(p.utilization() for p in pools) / len(pools)

    def all_records(self) -> list[RequestRecord]:
        return [self.records[i] for i in sorted(self.records)]

    def audit(self) -> dict[str, Any]:
        """Engine-specific audit entries."""
        return {}

    def _start(
        self,
        worker: Worker,
        prefill: list[tuple[RequestRecord, int]],
        decode: list[RequestRecord],
        latency: float,
        share: float,
        l100: float = 0.0,
    ) -> Iteration:
        """Mark a batch in flight and schedule its completion."""
        now = self.now
        for rec, _ in prefill:
            rec.in_flight = True
            if rec.first_scheduled is None:
                rec.first_scheduled = now
        for rec in decode:
            rec.in_flight = True
        it = Iteration(self, worker, prefill, decode, now, latency, share, self._iteration_index, l100)
        self._iteration_index += 1
        worker.in_flight.append(it)
        self.queue.schedule(it.end, EventKind.ITERATION_COMPLETE, it)
        return it

    def _take_prefill_batch(self, waiting: deque[RequestRecord], pool: KvPool) -> list[tuple[RequestRecord, int]]:
        """Pop FCFS requests whose full context allocates, stopping at the first that does not."""
        batch: list[tuple[RequestRecord, int]] = []
        while waiting and len(batch) < self.cfg.max_batch_size:
            rec = waiting[0]
            if rec.in_flight:
                break
            tokens = rec.context_len
            need = blocks_for_tokens(tokens, pool.block_size) - pool.held(rec.id)
            if need > 0 and not pool.try_allocate(rec.id, need, self.now):
                break
            waiting.popleft()
            batch.append((rec, tokens))
        return batch

    def _build_decode_batch(
        self,
        running: list[RequestRecord],
        waiting: deque[RequestRecord],
        pool: KvPool,
        requeue: Callable[[RequestRecord], None],
        limit: int | None = None,
    ) -> list[RequestRecord]:
        """Continuous batching over the idle running sequences.

        Newly decodable requests join ``running`` up to ``max_batch_size``. Each
        sequence in the batch grows its KV by one token, taking a new block at
        a boundary; when the pool is exhausted the most recently arrived idle
        sequence is preempted and handed to ``requeue``.
        """
        while waiting and len(running) < self.cfg.max_batch_size:
            running.append(waiting.popleft())
        cap = self.cfg.max_batch_size if limit is None else min(limit, self.cfg.max_batch_size)
        candidates = deque(sorted((r for r in running if not r.in_flight), key=lambda r: (r.arrival, r.id)))
        batch: list[RequestRecord] = []
        while candidates and len(batch) < cap:
            rec = candidates.popleft()
            need = blocks_for_tokens(rec.kv_tokens + 1, pool.block_size) - pool.held(rec.id)
            granted = need <= 0 or pool.try_allocate(rec.id, need, self.now)
            while not granted and self.cfg.preemption:
                victim = candidates.pop() if candidates else rec
                self._preempt(victim, running, pool, requeue)
                if victim is rec:
                    break
                granted = pool.try_allocate(rec.id, need, self.now)
            if granted:
                rec.kv_tokens += 1
                batch.append(rec)
        return batch

    def _preempt(
        self,
        victim: RequestRecord,
        running: list[RequestRecord],
        pool: KvPool,
        requeue: Callable[[RequestRecord], None],
    ) -> None:
        running.remove(victim)
        pool.release(victim.id)
        victim.kv_tokens = 0
        victim.prefill_progress = 0
        victim.preemptions += 1
        logging.debug(f"{self.name}: preempted request {victim.id} at t={self.now:.6f}")
        requeue(victim)

    def _finish_prefill(self, rec: RequestRecord, tokens: int) -> None:
        """Emit the first (or recomputed next) token of a prefilled request."""
        if rec.prefill_done is None:
            rec.prefill_done = self.now
        rec.generated += 1
        rec.kv_tokens = tokens
        rec.prefill_progress = 0

    def _complete(self, rec: RequestRecord, pool: KvPool) -> None:
        rec.completed = self.now
        pool.release(rec.id)


def require_symmetric(par: ParallelismConfig, kind: str) -> None:
    """Colocated designs run both phases with the same parallel layout."""
    if not par.symmetric:
        raise ValueError(f"{kind}: prefill and decode must use the same TP/PP degrees")
