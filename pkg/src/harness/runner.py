"""Single scenario runs and their report files."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import pandas as pd

from analysis.metrics import MetricsReport, build_report
from analysis.reports import write_audit_json, write_controller_csv, write_requests_csv, write_summary_csv
from control.controller import PartitionController
from core.config import Settings
from core.events import EventQueue, SchedulingError
from core.simulation import Simulation
from core.utils import ensure_dir
from serving.engines import DeploymentError, Engine, EngineConfig, SemiPDEngine, build_engine
from serving.kv import KvPoolError
from serving.resource import prefill_l100, tp_speedup

from .scenario import ScenarioConfig, load_scenario, save_resolved


class RunError(Exception):
    """Raised when a scenario fails while it runs."""

    pass


@dataclass
class RunResult:
    """What one run produced; picklable so sweeps can run in worker processes."""

    config: ScenarioConfig
    rate: float
    report: MetricsReport
    audit: dict[str, Any]
    controller_logs: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        return self.report.summary


def _controllers(engine: Engine) -> list[tuple[str, PartitionController]]:
    members = getattr(engine, "members", [engine])
    return [(m.name, m.controller) for m in members if isinstance(m, SemiPDEngine) and m.controller is not None]


def run_scenario(config: ScenarioConfig, rate: float | None = None) -> RunResult:
    """Simulate one scenario, optionally at an overridden rate.

    Raises:
        RunError: If the engine cannot be deployed or breaks a scheduling contract
    """
    slo = config.resolved_slo()
    cost, par = config.cost, config.parallelism

    def controller_factory(cfg: EngineConfig) -> PartitionController:
        speedup = tp_speedup(par.tp_prefill, par.tp_efficiency)
        return PartitionController(
            slo,
            config.controller,
            cfg.initial_partition,
            lambda tokens: prefill_l100([max(1, round(tokens))], cost) / speedup,
        )

    queue = EventQueue()
    try:
        engine = build_engine(config.engine, cost, par, config.kv, queue, controller_factory)
        requests, reported_rate = config.requests(engine.gpu_count(), rate)
        logging.info(f"running {engine.name} at rate {reported_rate:g} with {len(requests)} requests")
        sim = Simulation(queue, engine, requests).run()
    except (DeploymentError, SchedulingError, KvPoolError) as e:
        raise RunError(f"{config.engine.label}: {e}") from e

    report = build_report(engine.all_records(), slo, engine.name, reported_rate, config.metrics.trim)
    pools = engine.pools()
    report.high_water = {p.name: round(p.high_water, 9) for p in pools}
    report.exhausted_at = {p.name: p.exhausted_at for p in pools}
    controllers = _controllers(engine)
    if controllers:
        report.controller = pd.DataFrame(controllers[0][1].log)

    audit = {
        "engine": engine.name,
        "rate": reported_rate,
        "seed": config.seed,
        "requests": len(requests),
        "incomplete": report.incomplete,
        "events": sim.events,
        "end_time": round(sim.end_time, 9),
        "digest": sim.digest,
        "dispatched": dict(sorted(sim.dispatched.items())),
        "pools": {
            p.name: {
                "capacity": p.capacity,
                "high_water": round(p.high_water, 9),
                "exhausted_at": p.exhausted_at,
                "failed_allocations": p.failed_allocations,
            }
            for p in pools
        },
        "engine_audit": engine.audit(),
    }
    return RunResult(config, reported_rate, report, audit, {name: c.log for name, c in controllers})


def write_run(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write requests.csv, summary.csv, audit.json, the resolved scenario and controller logs."""
    out = ensure_dir(out_dir)
    written = [out / "requests.csv", out / "summary.csv", out / "audit.json", out / "scenario.resolved.yaml"]
    write_requests_csv(result.report.requests, written[0])
    write_summary_csv([result.summary], written[1])
    write_audit_json(result.audit, written[2])
    save_resolved(result.config, written[3])
    for i, (name, log) in enumerate(sorted(result.controller_logs.items())):
        path = out / ("controller.csv" if i == 0 else f"controller-{i}.csv")
        write_controller_csv(log, path)
        written.append(path)
    return written


class ScenarioRunner:
    """Runs a scenario file and writes its reports.

    Args:
        config_path: YAML or TOML scenario
        out_dir: Report directory; falls back to the scenario's ``output_dir``
            and then to ``Settings.OUTPUT_DIR``
        seed: Seed override
    """

    def __init__(self, config_path: str | Path, out_dir: str | Path | None = None, seed: int | None = None):
        self.config_path = Path(config_path)
        self.config = self._load_config(seed)
        self.out_dir = Path(out_dir or self.config.output_dir or Settings.OUTPUT_DIR)

    def _load_config(self, seed: int | None) -> ScenarioConfig:
        return load_scenario(self.config_path, seed=seed)

    def run(self, rate: float | None = None) -> RunResult:
        result = run_scenario(self.config, rate)
        written = write_run(result, self.out_dir)
        logging.info(f"wrote {len(written)} files to {self.out_dir}")
        return result
