"""Post-processing: SLOs, latency metrics and report files."""

from .metrics import (
    REQUEST_COLUMNS,
    SUMMARY_COLUMNS,
    MetricsReport,
    build_report,
    max_goodput,
    per_request_metrics,
    percentile,
    request_table,
    slo_attainment,
    summarize,
)
from .slo import SLO_PRESETS, SloConfig, derive_slo, slo_preset

__all__ = [
    "REQUEST_COLUMNS",
    "SLO_PRESETS",
    "SUMMARY_COLUMNS",
    "MetricsReport",
    "SloConfig",
    "build_report",
    "derive_slo",
    "max_goodput",
    "per_request_metrics",
    "percentile",
    "request_table",
    "slo_attainment",
    "slo_preset",
    "summarize",
]
