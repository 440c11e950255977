"""Latency model of the partition controller and its least-squares fit.

TTFT is modeled as ``a1 / (x' - lam) + b1`` (queueing delay of a prefill worker
running at normalized share x') and TPOT as ``a2 / y' + b2``. Shares are in
percent. The TTFT side is fit by grid search over ``lam`` with a
least-squares line (numpy lstsq) per grid point.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

LAMBDA_GRID = 0.25
LAMBDA_MARGIN = 0.5


@dataclass(frozen=True)
class Observation:
    """Windowed percentiles at the (time-weighted) normalized shares in effect."""

    window: int
    x_norm: float
    y_norm: float
    ttft_p: float | None
    tpot_p: float | None
    n_ttft: int = 0
    n_tpot: int = 0


@dataclass(frozen=True)
class LatencyModel:
    a1: float
    b1: float
    lam: float
    a2: float
    b2: float
    r2_ttft: float | None = None
    r2_tpot: float | None = None
    degraded: bool = False
    source: str = "fit"

    @classmethod
    def prior(cls, rate: float, prefill_l100: float, decode_l100: float) -> "LatencyModel":
        """Model implied by the cost model and an M/M/1 prefill queue.

        A prefill worker at share x serves ``x / (100 * l100)`` requests per second,
        so its sojourn time is ``100 * l100 / (x - 100 * r * l100)``.
        """
        return cls(
            a1=100.0 * prefill_l100,
            b1=0.0,
            lam=100.0 * rate * prefill_l100,
            a2=100.0 * decode_l100,
            b2=0.0,
            source="prior",
        )

    @property
    def rate(self) -> float:
        """Arrival rate implied by lam = r * a1."""
        return self.lam / self.a1 if self.a1 > 0 else 0.0


def estimate_ttft(m: LatencyModel, x_norm: float) -> float:
    """Estimated TTFT at normalized prefill share ``x_norm``; inf when saturated."""
    if x_norm <= m.lam:
        return math.inf
    return m.a1 / (x_norm - m.lam) + m.b1


def estimate_tpot(m: LatencyModel, y_norm: float) -> float:
    if y_norm <= 0:
        return math.inf
    return m.a2 / y_norm + m.b2


def _r2(y: np.ndarray, rss: float) -> float:
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        return 1.0 if rss <= 1e-24 else 0.0
    return 1.0 - rss / sst


def _lstsq(u: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """(slope, intercept, RSS) of the straight-line least-squares fit of y on u."""
    design = np.column_stack([u, np.ones_like(u)])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    rss = float(((design @ np.array([a, b]) - y) ** 2).sum())
    return float(a), float(b), rss


def _regress(u: np.ndarray, y: np.ndarray) -> tuple[float, float, float, bool]:
    """OLS of y on u; a negative slope is clamped to 0."""
    a, b, rss = _lstsq(u, y)
    degraded = a < 0
    if degraded:
        a, b = 0.0, float(y.mean())
        rss = float(((y - b) ** 2).sum())
    return a, b, _r2(y, rss), degraded


def fit_tpot(shares: Sequence[float], tpots: Sequence[float]) -> tuple[float, float, float, bool]:
    """(a2, b2, R², degraded) of TPOT against 1/y'."""
    y_share = np.asarray(shares, dtype=float)
    return _regress(1.0 / y_share, np.asarray(tpots, dtype=float))


def fit_ttft(shares: Sequence[float], ttfts: Sequence[float]) -> tuple[float, float, float, float, bool]:
    """(a1, b1, lam, R², degraded) of TTFT against 1/(x' - lam).

    ``lam`` is searched over [0, min(x') - 0.5] in steps of 0.25 percent; the
    grid point with the smallest residual wins.
    """
    x = np.asarray(shares, dtype=float)
    y = np.asarray(ttfts, dtype=float)
    steps = int(math.floor((x.min() - LAMBDA_MARGIN) / LAMBDA_GRID + 1e-9))
    grid = LAMBDA_GRID * np.arange(max(steps, 0) + 1)
    rss = [_lstsq(1.0 / (x - lam), y)[2] for lam in grid]
    best = int(np.argmin(rss))
    a, b, r2, degraded = _regress(1.0 / (x - grid[best]), y)
    return a, b, float(grid[best]), r2, degraded


def _distinct(values: Sequence[float]) -> int:
    return len({round(v, 9) for v in values})


def fit_latency_model(history: Sequence[Observation], previous: LatencyModel | None = None) -> LatencyModel | None:
    """Refit each side that has at least two distinct shares; keep the rest of ``previous``.

    Returns:
        The updated model, or ``previous`` when nothing could be refit (None if
        there is no previous model and a side is still unfittable)
    """
    ttft_obs = [(o.x_norm, o.ttft_p) for o in history if o.ttft_p is not None]
    tpot_obs = [(o.y_norm, o.tpot_p) for o in history if o.tpot_p is not None]
    fields: dict = {}
    degraded = False
    if _distinct([x for x, _ in ttft_obs]) >= 2:
        a1, b1, lam, r2, bad = fit_ttft([x for x, _ in ttft_obs], [t for _, t in ttft_obs])
        fields.update(a1=a1, b1=b1, lam=lam, r2_ttft=r2)
        degraded |= bad
    if _distinct([y for y, _ in tpot_obs]) >= 2:
        a2, b2, r2, bad = fit_tpot([y for y, _ in tpot_obs], [t for _, t in tpot_obs])
        fields.update(a2=a2, b2=b2, r2_tpot=r2)
        degraded |= bad
    if not fields:
        return previous
    if degraded:
        logging.warning("latency model fit clamped a negative slope to 0")
    if previous is None:
        if "a1" not in fields or "a2" not in fields:
            return None
        return LatencyModel(**fields, degraded=degraded)
    return replace(previous, **fields, degraded=degraded, source="fit")
