"""Report files: per-request, summary, controller, audit and plot-ready CSVs."""

import json
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd

from core.config import Settings

from .metrics import DEFAULT_TRIM, REQUEST_COLUMNS, SUMMARY_COLUMNS, summarize
from .slo import SloConfig

CONTROLLER_COLUMNS = [
    "window",
    "x",
    "y",
    "x_norm",
    "y_norm",
    "ttft_p",
    "tpot_p",
    "est_ttft",
    "est_tpot",
    "action",
]
PLOT_METRICS = [c for c in SUMMARY_COLUMNS if c not in ("engine", "rate")]


def _write_csv(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, index=False, float_format=Settings.float_format(), lineterminator="\n")


def write_requests_csv(frame: pd.DataFrame, path: str | Path) -> None:
    _write_csv(frame[REQUEST_COLUMNS], path)


def read_requests_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def summary_frame(rows: Sequence[dict]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=SUMMARY_COLUMNS)


def write_summary_csv(rows: Sequence[dict] | pd.DataFrame, path: str | Path) -> None:
    frame = rows if isinstance(rows, pd.DataFrame) else summary_frame(rows)
    _write_csv(frame[SUMMARY_COLUMNS], path)


def regenerate_summary(
    requests_csv: str | Path, slo: SloConfig, engine: str, rate: float, trim: float = DEFAULT_TRIM
) -> dict:
    """Recompute a summary row from a persisted per-request CSV."""
    return summarize(read_requests_csv(requests_csv), slo, engine, rate, trim)


def write_controller_csv(rows: Sequence[dict], path: str | Path) -> None:
    _write_csv(pd.DataFrame(list(rows), columns=CONTROLLER_COLUMNS), path)


def read_controller_csv(path: str | Path) -> pd.DataFrame:
    """Load a controller log, checking its header."""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in CONTROLLER_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: not a controller log, missing columns {', '.join(missing)}")
    return frame


def write_audit_json(audit: dict[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def merge_summaries(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Concatenate run summaries keyed by (engine, rate).

    Raises:
        ValueError: On an empty input or a duplicate (engine, rate) key
    """
    if not frames:
        raise ValueError("nothing to merge")
    merged = pd.concat(list(frames), ignore_index=True)[SUMMARY_COLUMNS]
    dupes = merged[merged.duplicated(["engine", "rate"], keep=False)]
    if not dupes.empty:
        keys = sorted({(e, r) for e, r in zip(dupes["engine"], dupes["rate"])})
        raise ValueError(f"duplicate (engine, rate) keys: {keys}")
    return merged


def plot_frames(merged: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Long-format ``engine,rate,value`` tables, one per summary metric."""
    return {
        metric: merged[["engine", "rate", metric]].rename(columns={metric: "value"}) for metric in PLOT_METRICS
    }


def speedup_frame(merged: pd.DataFrame) -> pd.DataFrame:
    """Mean end-to-end latency of the first engine divided by each engine's, per rate."""
    baseline_engine = merged["engine"].iloc[0]
    baseline = merged[merged["engine"] == baseline_engine].set_index("rate")["mean_e2e"]
    frame = merged[["engine", "rate", "mean_e2e"]].copy()
    frame["baseline"] = baseline_engine
    frame["mean_e2e_speedup"] = [
        baseline.get(rate, float("nan")) / e2e if e2e else float("nan")
        for rate, e2e in zip(frame["rate"], frame["mean_e2e"])
    ]
    return frame


def write_compare_outputs(merged: pd.DataFrame, out_dir: Path) -> list[Path]:
    """Write the merged summary, one plot file per metric and the speedup table."""
    written = [out_dir / "summary.csv"]
    write_summary_csv(merged, written[0])
    for metric, frame in plot_frames(merged).items():
        path = out_dir / f"plot_{metric}.csv"
        _write_csv(frame, path)
        written.append(path)
    speedup = out_dir / "speedup.csv"
    _write_csv(speedup_frame(merged), speedup)
    written.append(speedup)
    return written
