"""Rate sweeps, goodput search and multi-engine comparisons.

Runs are independent and seed-deterministic, so they are spread over a process
pool; results are collected in submission order.
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pandas as pd

from analysis.metrics import max_goodput
from analysis.reports import merge_summaries, summary_frame, write_compare_outputs, write_summary_csv
from core.config import Settings
from core.utils import ensure_dir

from .runner import RunResult, run_scenario, write_run
from .scenario import ScenarioConfig


def _run_task(task: tuple[ScenarioConfig, float | None]) -> RunResult:
    config, rate = task
    return run_scenario(config, rate)


def run_many(tasks: Sequence[tuple[ScenarioConfig, float | None]], workers: int | None = None) -> list[RunResult]:
    """Run (config, rate) tasks, in parallel unless ``workers`` is 1."""
    workers = workers if workers is not None else Settings.max_workers()
    if workers == 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks))


def sweep(config: ScenarioConfig, rates: Sequence[float], workers: int | None = None) -> list[RunResult]:
    """One run per rate, in the given order."""
    if not rates:
        raise ValueError("no rates to sweep")
    logging.info(f"sweeping {config.engine.label} over {len(rates)} rates")
    return run_many([(config, float(r)) for r in rates], workers)


def goodput_of(results: Sequence[RunResult], threshold: float) -> float:
    return max_goodput([(r.rate, r.summary["attainment"]) for r in results], threshold)


def goodput_sweep(
    config: ScenarioConfig, rates: Sequence[float], threshold: float, workers: int | None = None
) -> float:
    """Highest swept rate whose SLO attainment reaches ``threshold``."""
    return goodput_of(sweep(config, rates, workers), threshold)


def write_sweep(results: Sequence[RunResult], out_dir: str | Path) -> Path:
    """Per-rate run directories plus one summary row per rate."""
    out = ensure_dir(out_dir)
    for result in results:
        write_run(result, out / f"rate_{result.rate:g}")
    path = out / "summary.csv"
    write_summary_csv([r.summary for r in results], path)
    return path


def compare(
    configs: Sequence[ScenarioConfig], rates: Sequence[float] | None = None, workers: int | None = None
) -> pd.DataFrame:
    """Merged summary of every config at every rate, keyed by (engine, rate).

    Each config uses ``rates`` when given, else its own ``sweep.rates``, else
    its workload rate.

    Raises:
        ValueError: On no configs or a duplicate (engine, rate) key
    """
    if not configs:
        raise ValueError("compare needs at least one scenario")
    tasks: list[tuple[ScenarioConfig, float | None]] = []
    for config in configs:
        config_rates = list(rates or config.sweep.rates) or [None]
        tasks.extend((config, r) for r in config_rates)
    results = run_many(tasks, workers)
    return merge_summaries([summary_frame([r.summary]) for r in results])


def write_compare(merged: pd.DataFrame, out_dir: str | Path) -> list[Path]:
    return write_compare_outputs(merged, ensure_dir(out_dir))
