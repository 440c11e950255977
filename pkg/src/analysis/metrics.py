"""Per-request latencies, percentile summaries, SLO attainment and goodput.

Per-request values are rounded to 9 decimals before anything is summarized, so
a summary regenerated from ``requests.csv`` is identical to the original.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import pandas as pd

from serving.engines.base import RequestRecord

from .slo import SloConfig

REQUEST_COLUMNS = [
    "id",
    "arrival_s",
    "input_tokens",
    "output_tokens",
    "ttft_s",
    "tpot_s",
    "e2e_s",
    "preemptions",
]
SUMMARY_COLUMNS = [
    "engine",
    "rate",
    "p50_ttft",
    "p90_ttft",
    "p99_ttft",
    "p50_tpot",
    "p90_tpot",
    "p99_tpot",
    "attainment",
    "mean_e2e",
]
DIGITS = 9
DEFAULT_TRIM = 0.05


def per_request_metrics(rec: RequestRecord) -> tuple[float, float | None]:
    """TTFT and TPOT of one request.

    TPOT excludes the first token, so it is None for single-token outputs.

    Raises:
        ValueError: If the request never finished its prefill
    """
    if rec.prefill_done is None:
        raise ValueError(f"request {rec.id} has no first token")
    ttft = rec.prefill_done - rec.arrival
    output_len = rec.request.output_len
    if output_len < 2 or rec.completed is None:
        return ttft, None
    return ttft, (rec.completed - rec.prefill_done) / (output_len - 1)


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value (1-based)."""
    if not 0 < p <= 1:
        raise ValueError(f"percentile must be in (0, 1], got {p}")
    if len(values) == 0:
        raise ValueError("percentile of an empty list")
    ordered = sorted(values)
    rank = max(1, math.ceil(round(p * len(ordered), 9)))
    return ordered[rank - 1]


def request_table(records: Iterable[RequestRecord]) -> pd.DataFrame:
    """One row per request; latencies of unfinished requests are NaN."""
    rows = []
    for rec in records:
        ttft = tpot = e2e = math.nan
        if rec.prefill_done is not None:
            first, per_token = per_request_metrics(rec)
            ttft = first
            if per_token is not None:
                tpot = per_token
        if rec.completed is not None:
            e2e = rec.completed - rec.arrival
        rows.append(
            (rec.id, rec.arrival, rec.input_len, rec.request.output_len, ttft, tpot, e2e, rec.preemptions)
        )
    frame = pd.DataFrame(rows, columns=REQUEST_COLUMNS)
    for col in ("arrival_s", "ttft_s", "tpot_s", "e2e_s"):
        frame[col] = frame[col].astype(float).round(DIGITS)
    return frame


def _meets(frame: pd.DataFrame, slo: SloConfig) -> pd.Series:
    done = frame["e2e_s"].notna()
    ttft_ok = frame["ttft_s"] <= slo.ttft_slo
    tpot_ok = (frame["tpot_s"] <= slo.tpot_slo) | (frame["tpot_s"].isna() & (frame["output_tokens"] < 2))
    return done & ttft_ok & tpot_ok


def frame_attainment(frame: pd.DataFrame, slo: SloConfig) -> float:
    """Fraction of rows meeting both bounds; unfinished requests count as violations."""
    if frame.empty:
        return 0.0
    return float(_meets(frame, slo).mean())


def slo_attainment(records: Iterable[RequestRecord], slo: SloConfig) -> float:
    """Fraction of requests with TTFT and TPOT (if any) within the SLO."""
    return frame_attainment(request_table(records), slo)


def trimmed(frame: pd.DataFrame, trim: float) -> pd.DataFrame:
    """Completed requests without the first and last ``trim`` fraction by arrival."""
    done = frame[frame["e2e_s"].notna()].sort_values(["arrival_s", "id"], kind="stable")
    k = int(math.floor(trim * len(done)))
    return done.iloc[k : len(done) - k] if k else done


def _percentiles(values: pd.Series) -> list[float]:
    clean = values.dropna().tolist()
    if not clean:
        return [math.nan] * 3
    return [percentile(clean, p) for p in (0.5, 0.9, 0.99)]


def summarize(frame: pd.DataFrame, slo: SloConfig, engine: str, rate: float, trim: float = DEFAULT_TRIM) -> dict:
    """Summary row: percentiles over the trimmed set, attainment and mean e2e over everything."""
    steady = trimmed(frame, trim)
    ttft = _percentiles(steady["ttft_s"])
    tpot = _percentiles(steady["tpot_s"])
    e2e = frame["e2e_s"].dropna()
    row = {
        "engine": engine,
        "rate": rate,
        "p50_ttft": ttft[0],
        "p90_ttft": ttft[1],
        "p99_ttft": ttft[2],
        "p50_tpot": tpot[0],
        "p90_tpot": tpot[1],
        "p99_tpot": tpot[2],
        "attainment": frame_attainment(frame, slo),
        "mean_e2e": float(e2e.mean()) if len(e2e) else math.nan,
    }
    return {k: (round(v, DIGITS) if isinstance(v, float) else v) for k, v in row.items()}


def max_goodput(rows: Sequence[tuple[float, float]], threshold: float) -> float:
    """Largest rate whose attainment reaches ``threshold``; 0 when none does.

    Args:
        rows: (rate, attainment) pairs
        threshold: Attainment fraction, e.g. 0.9
    """
    ordered = sorted(rows)
    attainments = [a for _, a in ordered]
    if any(b > a for a, b in zip(attainments, attainments[1:])):
        logging.warning("attainment is not monotone in rate; reporting the largest qualifying rate")
    qualifying = [rate for rate, att in ordered if att >= threshold]
    return max(qualifying) if qualifying else 0.0


@dataclass
class MetricsReport:
    """Everything a run reports about its requests and pools."""

    engine: str
    rate: float
    requests: pd.DataFrame
    summary: dict
    high_water: dict[str, float] = field(default_factory=dict)
    exhausted_at: dict[str, float | None] = field(default_factory=dict)
    controller: pd.DataFrame | None = None

    @property
    def incomplete(self) -> int:
        return int(self.requests["e2e_s"].isna().sum())


def build_report(
    records: Iterable[RequestRecord],
    slo: SloConfig,
    engine: str,
    rate: float,
    trim: float = DEFAULT_TRIM,
) -> MetricsReport:
    frame = request_table(records)
    report = MetricsReport(engine, rate, frame, summarize(frame, slo, engine, rate, trim))
    if report.incomplete:
        logging.warning(f"{engine} at rate {rate:g}: {report.incomplete} request(s) did not complete")
    return report


def split_at(frame: pd.DataFrame, t: float) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Completed requests arriving before and at/after ``t``."""
    done = frame[frame["e2e_s"].notna()]
    return done[done["arrival_s"] < t], done[done["arrival_s"] >= t]
