"""Tests for the serving engines."""

import sys
from pathlib import Path

import pytest
from pydantic import ValidationError

# Add src to Python path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.events import EventQueue, SchedulingError  # noqa: E402
from core.simulation import Simulation  # noqa: E402
from serving.engines import (  # noqa: E402
    ChunkedEngine,
    ClusterEngine,
    DeploymentError,
    DisaggregatedEngine,
    Engine,
    EngineConfig,
    KvSizing,
    RequestRecord,
    SemiPDEngine,
    TransferConfig,
    UnifiedEngine,
    build_engine,
    route_request,
)
from serving.engines.base import Worker  # noqa: E402
from serving.resource import (  # noqa: E402
    CostParams,
    ParallelismConfig,
    PartitionConfig,
    decode_iter_latency,
    prefill_iter_latency,
)
from workload.presets import preset_params  # noqa: E402
from workload.trace import Request, generate_trace  # noqa: E402

KV = KvSizing(capacity_blocks=4096, prefill_capacity_blocks=4096, decode_capacity_blocks=4096)


def _build(
    cfg: EngineConfig, cost: CostParams | None = None, kv: KvSizing = KV, par: ParallelismConfig | None = None
) -> tuple[EventQueue, Engine]:
    queue = EventQueue()
    return queue, build_engine(cfg, cost or CostParams(), par or ParallelismConfig(), kv, queue)


def _simulate(
    cfg: EngineConfig,
    requests: list[Request],
    cost: CostParams | None = None,
    kv: KvSizing = KV,
    par: ParallelismConfig | None = None,
) -> Engine:
    queue, engine = _build(cfg, cost, kv, par)
    Simulation(queue, engine, requests).run()
    return engine


def _drain(queue: EventQueue, engine: Engine, until: float | None = None) -> None:
    while queue.peek_time() is not None and (until is None or queue.peek_time() <= until):
        engine.handle(queue.advance())


def _trace(count: int = 120, rate: float = 4.0, seed: int = 1) -> list[Request]:
    return generate_trace(preset_params("sharegpt-like", rate, count, seed))


def _in_decode(engine: Engine, rid: int, kv_tokens: int, output_len: int = 100) -> RequestRecord:
    """Hand a request to the decode side as if its prefill had just finished."""
    rec = RequestRecord(Request(rid, 0.0, kv_tokens, output_len), prefill_done=0.0, generated=1, kv_tokens=kv_tokens)
    engine.records[rid] = rec
    engine.pool.try_allocate(rid, -(-kv_tokens // engine.pool.block_size))
    engine.decode_waiting.append(rec)
    return rec


ALL_KINDS = [
    EngineConfig(kind="unified-pf"),
    EngineConfig(kind="unified-df"),
    EngineConfig(kind="unified-chunked", chunk_size=512),
    EngineConfig(kind="disaggregated"),
    EngineConfig(kind="semi-pd"),
    EngineConfig(kind="semi-pd", initial_partition=PartitionConfig(x=30, y=70)),
    EngineConfig(kind="cluster", members=[EngineConfig(kind="semi-pd", count=2), EngineConfig(kind="unified-pf")]),
]
PIPELINED = ParallelismConfig(pp_prefill=2, pp_decode=2)


def _workers(engine: Engine) -> list[Worker]:
    if isinstance(engine, SemiPDEngine):
        return [engine.prefill_worker, engine.decode_worker]
    if isinstance(engine, DisaggregatedEngine):
        return [inst.worker for inst in engine.prefill_instances + engine.decode_instances]
    assert isinstance(engine, UnifiedEngine)
    return [engine.gpu]


class TestEveryEngine:
    """Properties every serving design must keep."""

    @pytest.mark.parametrize("cfg", ALL_KINDS, ids=lambda c: c.label)
    def test_every_request_completes_in_order(self, cfg: EngineConfig) -> None:
        """Test every request completes in order."""
        trace = _trace()
        engine = _simulate(cfg, trace)
        records = engine.all_records()
        assert [r.id for r in records] == [r.id for r in trace]
        for rec in records:
            assert rec.completed is not None, f"request {rec.id} did not complete"
            assert rec.arrival <= rec.first_scheduled <= rec.prefill_done <= rec.completed
            assert rec.generated == rec.request.output_len

    @pytest.mark.parametrize("cfg", ALL_KINDS, ids=lambda c: c.label)
    def test_pools_drain(self, cfg: EngineConfig) -> None:
        """Test pools drain."""
        engine = _simulate(cfg, _trace(60))
        for pool in engine.pools():
            assert pool.free == pool.capacity
            assert pool.high_water <= 1
            pool.check()
        assert max(pool.high_water for pool in engine.pools()) > 0

    @pytest.mark.parametrize("cfg", ALL_KINDS, ids=lambda c: c.label)
    def test_replay_is_identical(self, cfg: EngineConfig) -> None:
        """Test replay is identical."""
        def digest() -> str:
            queue, engine = _build(cfg)
            return Simulation(queue, engine, _trace(60)).run().digest

        assert digest() == digest()

    def test_single_token_output_skips_decode(self) -> None:
        """Test single token output skips decode."""
        for cfg in ALL_KINDS:
            engine = _simulate(cfg, [Request(0, 0.0, 100, 1)])
            rec = engine.all_records()[0]
            assert rec.completed == rec.prefill_done
        assert _simulate(EngineConfig(kind="unified-pf"), [Request(0, 0.0, 100, 1)]).decode_iterations == 0

    def test_late_arrival_rejected(self) -> None:
        """Test late arrival rejected."""
        queue, engine = _build(EngineConfig(kind="unified-pf"))
        with pytest.raises(SchedulingError):
            engine.admit(Request(0, 1.0, 10, 2))

    @pytest.mark.parametrize("cfg", ALL_KINDS[:-1], ids=lambda c: c.label)
    def test_pipeline_stages_hold_disjoint_sequences(self, cfg: EngineConfig) -> None:
        """Test that two pipeline stages never run the same sequence at once."""
        queue, engine = _build(cfg.model_copy(update={"max_batch_size": 2}), par=PIPELINED)
        for i in range(4):
            engine.admit(Request(i, 0.0, 100, 5))
        workers = _workers(engine)
        peak = 0

        def check() -> None:
            nonlocal peak
            ids = [rec.id for w in workers for it in w.in_flight for rec in [r for r, _ in it.prefill] + it.decode]
            assert len(ids) == len(set(ids))
            for worker in workers:
                assert len(worker.in_flight) <= worker.slots
                if worker.busy:
                    assert worker.busy_until >= queue.now
                else:
                    assert worker.busy_until == 0.0
            peak = max(peak, *(len(w.in_flight) for w in workers))

        check()
        while queue.peek_time() is not None:
            engine.handle(queue.advance())
            check()
        if cfg.kind != "unified-chunked":
            assert peak == 2
        for rec in engine.all_records():
            assert rec.completed is not None
            assert rec.generated == 5
        for pool in engine.pools():
            assert pool.free == pool.capacity


class TestUnifiedEngine:
    """Serial phases on one GPU."""

    def test_continuous_batching_with_prefill_priority(self) -> None:
        """Test continuous batching with prefill priority."""
        queue, engine = _build(EngineConfig(kind="unified-pf"))
        assert isinstance(engine, UnifiedEngine)
        for i in range(3):
            engine.admit(Request(i, 0.0, 50, 20))
        assert [rec.id for rec, _ in engine.gpu.in_flight[0].prefill] == [0]
        _drain(queue, engine, until=queue.peek_time())
        assert [rec.id for rec, _ in engine.gpu.in_flight[0].prefill] == [1, 2]
        _drain(queue, engine, until=queue.peek_time())
        assert len(engine.gpu.in_flight[0].decode) == 3
        for i in (3, 4):
            engine.admit(Request(i, queue.now, 50, 20))
        _drain(queue, engine, until=queue.peek_time())
        assert [rec.id for rec, _ in engine.gpu.in_flight[0].prefill] == [3, 4]
        _drain(queue, engine, until=queue.peek_time())
        assert len(engine.gpu.in_flight[0].decode) == 5

    def test_decode_first_defers_prefill(self) -> None:
        """Test decode first defers prefill."""
        queue, engine = _build(EngineConfig(kind="unified-df"))
        engine.admit(Request(0, 0.0, 50, 20))
        _drain(queue, engine, until=queue.peek_time())
        engine.admit(Request(1, queue.now, 50, 20))
        assert engine.gpu.in_flight[0].decode
        assert engine.records[1].first_scheduled is None

    def test_preemption_evicts_latest_arrival(self) -> None:
        """Test preemption evicts latest arrival."""
        cost = CostParams()
        kv = KvSizing(capacity_blocks=4)
        requests = [Request(0, 0.0, 16, 40), Request(1, 0.0, 16, 40)]
        engine = _simulate(EngineConfig(kind="unified-pf"), requests, cost, kv)
        first, second = engine.all_records()
        assert first.preemptions == 0
        assert second.preemptions >= 1
        assert first.completed is not None and second.completed is not None
        assert second.completed > first.completed

    def test_no_preemption_stalls(self) -> None:
        """Test no preemption stalls."""
        kv = KvSizing(capacity_blocks=4)
        cfg = EngineConfig(kind="unified-pf", preemption=False)
        engine = _simulate(cfg, [Request(0, 0.0, 16, 40), Request(1, 0.0, 16, 40)], kv=kv)
        assert all(r.completed is None for r in engine.all_records())
        assert engine.pools()[0].failed_allocations > 0

    def test_prefill_waits_for_blocks(self) -> None:
        """Test prefill waits for blocks."""
        kv = KvSizing(capacity_blocks=10)
        queue, engine = _build(EngineConfig(kind="unified-pf"), kv=kv)
        engine.admit(Request(0, 0.0, 16 * 16, 2))
        assert engine.records[0].first_scheduled is None
        assert not engine.gpu.busy


class TestChunkedEngine:
    """Chunked prefill piggy-backing decode tokens."""

    def test_chunk_fills_the_budget(self) -> None:
        """Test chunk fills the budget."""
        queue, engine = _build(EngineConfig(kind="unified-chunked", chunk_size=1024))
        assert isinstance(engine, ChunkedEngine)
        for i in range(40):
            _in_decode(engine, i, 10)
        engine.admit(Request(40, 0.0, 2000, 5))
        it = engine.gpu.in_flight[0]
        assert len(it.decode) == 40
        assert [(rec.id, n) for rec, n in it.prefill] == [(40, 984)]

        _drain(queue, engine, until=queue.peek_time())
        head = engine.records[40]
        assert head.prefill_done is None
        assert head.prefill_progress == 984
        _drain(queue, engine)
        assert head.prefill_done is not None
        assert head.completed is not None


class TestDisaggregatedEngine:
    """Separate instances with KV transfer."""

    def test_bandwidth_transfer_delay(self) -> None:
        """Test bandwidth transfer delay."""
        cfg = EngineConfig(kind="disaggregated", transfer=TransferConfig(mode="bandwidth", bandwidth=50e9))
        _, engine = _build(cfg)
        assert isinstance(engine, DisaggregatedEngine)
        rec = RequestRecord(Request(0, 0.0, 251, 10), kv_tokens=251)
        assert engine.transfer_delay(rec) == pytest.approx(251 * 131072 / 50e9)
        assert engine.transfer_delay(rec) == pytest.approx(0.66e-3, abs=0.01e-3)

    def test_one_iteration_transfer_delay(self) -> None:
        """Test one iteration transfer delay."""
        _, engine = _build(EngineConfig(kind="disaggregated"))
        rec = RequestRecord(Request(0, 0.0, 251, 10), kv_tokens=251)
        assert engine.transfer_delay(rec) == decode_iter_latency([251], CostParams(), ParallelismConfig(), 100)

    def test_bandwidth_required(self) -> None:
        """Test bandwidth required."""
        with pytest.raises(ValidationError, match="bandwidth"):
            TransferConfig(mode="bandwidth")

    def test_transfer_lands_in_tpot_not_ttft(self) -> None:
        """Test transfer lands in TPOT not TTFT."""
        cost = CostParams()
        engine = _simulate(EngineConfig(kind="disaggregated"), [Request(0, 0.0, 251, 3)], cost)
        rec = engine.all_records()[0]
        par = ParallelismConfig()
        assert rec.prefill_done == pytest.approx(prefill_iter_latency([251], cost, par, 100))
        assert rec.transfer_delay > 0
        decode = decode_iter_latency([252], cost, par, 100) + decode_iter_latency([253], cost, par, 100)
        assert rec.completed - rec.prefill_done == pytest.approx(rec.transfer_delay + decode)
        assert engine.audit() == {"transfers": 1}

    def test_decode_pool_is_the_bottleneck(self) -> None:
        """Test decode pool is the bottleneck."""
        kv = KvSizing(prefill_capacity_blocks=1000, decode_capacity_blocks=60)
        trace = [Request(i, 0.05 * i, 251, 200) for i in range(12)]
        engine = _simulate(EngineConfig(kind="disaggregated"), trace, kv=kv)
        prefill_pool, decode_pool = engine.pools()
        assert prefill_pool.exhausted_at is None
        assert decode_pool.exhausted_at is not None
        assert all(r.completed is not None for r in engine.all_records())

    def test_prefill_blocks_freed_when_transfer_lands(self) -> None:
        """Test that requests queued for decode memory hold no prefill-pool blocks."""
        kv = KvSizing(prefill_capacity_blocks=1000, decode_capacity_blocks=20)
        queue, engine = _build(EngineConfig(kind="disaggregated"), kv=kv)
        assert isinstance(engine, DisaggregatedEngine)
        sim = Simulation(queue, engine, [Request(i, 0.0, 251, 50) for i in range(6)])
        sim.run(max_events=40)
        (prefill,) = engine.prefill_instances
        (decode,) = engine.decode_instances
        assert len(decode.waiting) == 5
        for rec in decode.waiting:
            assert prefill.pool.held(rec.id) == 0
        assert prefill.pool.free == prefill.pool.capacity
        sim.run()
        assert all(r.completed is not None for r in engine.all_records())
        assert decode.pool.free == decode.pool.capacity

    def test_xpyd_gpu_count(self) -> None:
        """Test GPU and pool counts of an xPyD deployment."""
        _, engine = _build(EngineConfig(kind="disaggregated", prefill_instances=2, decode_instances=3))
        assert engine.gpu_count() == 5
        assert len(engine.pools()) == 5


class TestSemiPDEngine:
    """Shared storage with SM-partitioned workers."""

    def test_shares_when_both_workers_run(self) -> None:
        """Test shares when both workers run."""
        for partition, expected in (((30, 70), (30, 70)), ((100, 100), (50, 50))):
            cfg = EngineConfig(kind="semi-pd", initial_partition=PartitionConfig(x=partition[0], y=partition[1]))
            _, engine = _build(cfg)
            assert isinstance(engine, SemiPDEngine)
            _in_decode(engine, 0, 100)
            engine.admit(Request(1, 0.0, 100, 10))
            prefill_it = engine.prefill_worker.in_flight[0]
            decode_it = engine.decode_worker.in_flight[0]
            assert (prefill_it.share, decode_it.share) == pytest.approx(expected)
            assert prefill_it.start == decode_it.start == 0.0

    def test_lone_worker_runs_at_its_cap(self) -> None:
        """Test lone worker runs at its cap."""
        _, engine = _build(EngineConfig(kind="semi-pd", initial_partition=PartitionConfig(x=100, y=100)))
        engine.admit(Request(0, 0.0, 100, 10))
        assert engine.prefill_worker.in_flight[0].share == 100

    def test_switch_adopted_at_iteration_boundaries(self) -> None:
        """Test switch adopted at iteration boundaries."""
        cost = CostParams(l100_prefill_base=0.6, prefill_per_token=1e-9)
        queue, engine = _build(EngineConfig(kind="semi-pd"), cost)
        engine.admit(Request(0, 0.0, 10, 1))
        engine.request_switch(PartitionConfig(x=40, y=60))
        assert engine.in_effect() == PartitionConfig(x=100, y=100)
        _drain(queue, engine)
        record = engine.switches[0]
        assert record.prepared_at == pytest.approx(0.5)
        assert record.adopted["decode"] == pytest.approx(0.5)
        assert record.adopted["prefill"] == pytest.approx(0.6)
        assert record.mixed_period == pytest.approx(0.1)
        assert engine.in_effect() == PartitionConfig(x=40, y=60)

    def test_newer_switch_supersedes(self) -> None:
        """Test newer switch supersedes."""
        queue, engine = _build(EngineConfig(kind="semi-pd"))
        engine.request_switch(PartitionConfig(x=30, y=70))
        engine.request_switch(PartitionConfig(x=40, y=60))
        _drain(queue, engine)
        first, second = engine.switches
        assert first.superseded and first.prepared_at is None and not first.adopted
        assert second.adopted == {"prefill": 0.5, "decode": 0.5}
        assert engine.audit()["final_partition"] == {"x": 40, "y": 60}

    def test_no_switch_keeps_partition(self) -> None:
        """Test no switch keeps partition."""
        engine = _simulate(EngineConfig(kind="semi-pd", initial_partition=PartitionConfig(x=30, y=70)), _trace(40))
        assert engine.switches == []
        assert engine.in_effect() == PartitionConfig(x=30, y=70)

    def test_naive_switch_stalls_scheduling(self) -> None:
        """Test naive switch stalls scheduling."""
        for naive, start in ((True, 0.5), (False, 0.0)):
            queue, engine = _build(EngineConfig(kind="semi-pd", naive_switch=naive))
            engine.request_switch(PartitionConfig(x=50, y=50))
            engine.admit(Request(0, 0.0, 100, 2))
            _drain(queue, engine)
            assert engine.records[0].first_scheduled == pytest.approx(start)
            assert engine.records[0].completed is not None

    def test_matches_unified_when_only_prefill_runs(self) -> None:
        """Test matches unified when only prefill runs."""
        trace = [Request(r.id, r.arrival, r.input_len, 1) for r in _trace(150, rate=8.0)]
        semi = _simulate(EngineConfig(kind="semi-pd"), trace)
        unified = _simulate(EngineConfig(kind="unified-pf"), trace)
        for a, b in zip(semi.all_records(), unified.all_records()):
            assert a.completed == pytest.approx(b.completed, abs=1e-9)

    def test_switch_never_loses_requests(self) -> None:
        """Test switch never loses requests."""
        queue, engine = _build(EngineConfig(kind="semi-pd", switch_prep_delay=0.2))
        trace = _trace(80)
        sim = Simulation(queue, engine, trace)
        sim.run(max_events=40)
        engine.request_switch(PartitionConfig(x=40, y=90))
        sim.run()
        assert sorted(engine.records) == [r.id for r in trace]
        assert all(r.completed is not None for r in engine.all_records())
        assert engine.in_effect() == PartitionConfig(x=40, y=90)


class TestRouting:
    """Least-loaded routing and clusters."""

    class _Inst:
        def __init__(self, depth: int, util: float):
            self.depth, self.util = depth, util

        def queue_depth(self) -> int:
            return self.depth

        def kv_utilization(self) -> float:
            return self.util

    def test_route_examples(self) -> None:
        """Test request routing across instances."""
        assert route_request([self._Inst(3, 0), self._Inst(1, 0), self._Inst(2, 0)]) == 1
        assert route_request([self._Inst(2, 0.9), self._Inst(2, 0.4)]) == 1
        assert route_request([self._Inst(0, 0.0), self._Inst(0, 0.0)]) == 0

    def test_route_empty(self) -> None:
        """Test routing with no instances."""
        with pytest.raises(ValueError):
            route_request([])

    def test_cluster_spreads_load(self) -> None:
        """Test cluster spreads load."""
        cfg = EngineConfig(kind="cluster", members=[EngineConfig(kind="unified-pf", count=3)])
        engine = _simulate(cfg, _trace(90, rate=12.0))
        assert isinstance(engine, ClusterEngine)
        routed = engine.audit()["routed"]
        assert set(routed) == {"unified-pf#0", "unified-pf#1", "unified-pf#2"}
        assert sum(routed.values()) == 90
        assert min(routed.values()) > 0
        assert engine.gpu_count() == 3


class TestConfiguration:
    def test_labels(self) -> None:
        """Test engine report labels."""
        assert EngineConfig(kind="semi-pd").label == "semi-pd(100,100)"
        assert EngineConfig(kind="semi-pd", dynamic=True).label == "semi-pd(dynamic)"
        assert EngineConfig(kind="disaggregated").label == "disaggregated(1P1D)"
        assert EngineConfig(kind="unified-pf", name="vllm").label == "vllm"

    def test_dynamic_only_for_semi_pd(self) -> None:
        """Test dynamic only for semi-PD."""
        with pytest.raises(ValidationError, match="dynamic"):
            EngineConfig(kind="unified-pf", dynamic=True)

    def test_weights_must_fit(self) -> None:
        """Test weights must fit."""
        kv = KvSizing(gpu_mem_bytes=10e9, weight_bytes=16e9)
        with pytest.raises(DeploymentError, match="do not fit"):
            _build(EngineConfig(kind="unified-pf"), kv=kv)

    def test_colocated_needs_symmetric_parallelism(self) -> None:
        """Test colocated needs symmetric parallelism."""
        queue = EventQueue()
        par = ParallelismConfig(tp_prefill=2, tp_decode=1)
        with pytest.raises(ValueError, match="same TP/PP"):
            build_engine(EngineConfig(kind="semi-pd"), CostParams(), par, KV, queue)

    def test_capacity_from_memory(self) -> None:
        """Test capacity from memory."""
        kv = KvSizing(gpu_mem_bytes=80e9, weight_bytes=16e9)
        assert kv.capacity(1, 131072, None, "x") == int(64e9 // (131072 * 16))
        assert kv.capacity(1, 131072, 7, "x") == 7
