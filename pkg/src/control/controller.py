"""SLO-aware partition controller.

Every ``window_size`` decode iterations the controller compares the observed
TTFT/TPOT percentiles with the SLO. When exactly one side fails it grows that
side's share step by step until the latency model predicts the SLO is met.
"""

import logging
import math
from collections.abc import Callable, Sequence

from pydantic import BaseModel, ConfigDict, Field

from analysis.metrics import per_request_metrics, percentile
from analysis.slo import SloConfig
from serving.engines.base import RequestRecord
from serving.resource import PartitionConfig

from .fitting import LatencyModel, Observation, estimate_tpot, estimate_ttft, fit_latency_model


class ControllerConfig(BaseModel):
    """Adjustment cadence and step bounds."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    window_size: int = Field(default=200, gt=0, description="decode iterations per window")
    max_step: int = Field(default=6, gt=0)
    step_size: float = Field(default=5.0, gt=0, description="percent of SMs per step")


def observe_window(ttfts: Sequence[float], tpots: Sequence[float], p: float) -> tuple[float | None, float | None]:
    """p-th percentile of each side; None for a side without samples."""
    ttft = percentile(ttfts, p) if ttfts else None
    tpot = percentile(tpots, p) if tpots else None
    return ttft, tpot


def _norm(x: float, y: float) -> tuple[float, float]:
    return 100.0 * x / (x + y), 100.0 * y / (x + y)


def adjust_partition(
    iteration: int,
    current: PartitionConfig,
    slo: SloConfig,
    cfg: ControllerConfig,
    m: LatencyModel,
    obs: Observation,
) -> PartitionConfig:
    """One controller decision.

    Pass/fail is decided on the observed percentiles; the model is only used to
    decide how far to move. Growing a share past 100 shrinks the other share
    instead, and a step that would shrink it to 0 or below ends the search.
    """
    if iteration % cfg.window_size != 0:
        return current
    ttft_fail = obs.ttft_p is not None and obs.ttft_p > slo.ttft_slo
    tpot_fail = obs.tpot_p is not None and obs.tpot_p > slo.tpot_slo
    if ttft_fail == tpot_fail:
        return current

    own, other = (current.x, current.y) if ttft_fail else (current.y, current.x)

    def missed(own: float, other: float) -> bool:
        if ttft_fail:
            return estimate_ttft(m, _norm(own, other)[0]) > slo.ttft_slo
        return estimate_tpot(m, _norm(other, own)[1]) > slo.tpot_slo

    step = 0
    while step < cfg.max_step and missed(own, other):
        if own + cfg.step_size <= 100:
            own = round(own + cfg.step_size, 9)
        elif other - cfg.step_size > 0:
            other = round(other - cfg.step_size, 9)
        else:
            break
        step += 1
    if ttft_fail:
        return PartitionConfig(x=own, y=other)
    return PartitionConfig(x=other, y=own)


def _action(old: PartitionConfig, new: PartitionConfig, obs: Observation, slo: SloConfig) -> str:
    if new.x > old.x:
        return "increase-x"
    if new.y > old.y:
        return "increase-y"
    if new.y < old.y:
        return "decrease-y"
    if new.x < old.x:
        return "decrease-x"
    ttft_fail = obs.ttft_p is not None and obs.ttft_p > slo.ttft_slo
    tpot_fail = obs.tpot_p is not None and obs.tpot_p > slo.tpot_slo
    if ttft_fail and tpot_fail:
        return "hold-both-fail"
    return "hold"


class PartitionController:
    """Windowed observation buffer plus the decision loop for one semi-PD engine.

    Args:
        slo: Latency targets
        cfg: Window and step settings
        initial: Partition in effect at t=0
        prefill_l100: Prefill latency at 100% SMs for a given input length,
            used to seed the model before two distinct shares are observed
    """

    def __init__(
        self,
        slo: SloConfig,
        cfg: ControllerConfig,
        initial: PartitionConfig,
        prefill_l100: Callable[[float], float],
    ):
        self.slo = slo
        self.cfg = cfg
        self.prefill_l100 = prefill_l100
        self.model: LatencyModel | None = None
        self.history: list[Observation] = []
        self.log: list[dict] = []
        self.window = 0
        self._window_start = 0.0
        self._segment_start = 0.0
        self._segment_norm = initial.normalized()
        self._area = [0.0, 0.0]
        self._reset_buffers()

    def _reset_buffers(self) -> None:
        self._ttfts: list[float] = []
        self._tpots: list[float] = []
        self._input_lens: list[int] = []
        self._decode_l100s: list[float] = []
        self._arrivals = 0

    def record_arrival(self, now: float) -> None:
        self._arrivals += 1

    def record_prefill(self, rec: RequestRecord) -> None:
        ttft, _ = per_request_metrics(rec)
        self._ttfts.append(ttft)
        self._input_lens.append(rec.input_len)

    def record_completion(self, rec: RequestRecord) -> None:
        _, tpot = per_request_metrics(rec)
        if tpot is not None:
            self._tpots.append(tpot)

    def record_decode_iteration(self, l100: float) -> None:
        self._decode_l100s.append(l100)

    def partition_changed(self, now: float, in_effect: PartitionConfig) -> None:
        self._close_segment(now)
        self._segment_norm = in_effect.normalized()

    def _close_segment(self, now: float) -> None:
        span = now - self._segment_start
        self._area[0] += span * self._segment_norm[0]
        self._area[1] += span * self._segment_norm[1]
        self._segment_start = now

    def _window_shares(self, now: float) -> tuple[float, float]:
        self._close_segment(now)
        span = now - self._window_start
        if span <= 0:
            return self._segment_norm
        return self._area[0] / span, self._area[1] / span

    def on_tick(self, now: float, iteration: int, current: PartitionConfig) -> PartitionConfig:
        """Close the window, update the model and decide the next partition."""
        x_norm, y_norm = self._window_shares(now)
        ttft_p, tpot_p = observe_window(self._ttfts, self._tpots, self.slo.percentile)
        obs = Observation(self.window, x_norm, y_norm, ttft_p, tpot_p, len(self._ttfts), len(self._tpots))
        if ttft_p is not None or tpot_p is not None:
            self.history.append(obs)
        if self.model is None:
            self.model = self._prior(now)
        self.model = fit_latency_model(self.history, self.model)

        if self.model is None:
            new, action = current, "warmup"
            est_ttft = est_tpot = math.nan
        else:
            new = adjust_partition(iteration, current, self.slo, self.cfg, self.model, obs)
            action = _action(current, new, obs, self.slo)
            nx, ny = new.normalized()
            est_ttft = estimate_ttft(self.model, nx)
            est_tpot = estimate_tpot(self.model, ny)
        self.log.append(
            {
                "window": self.window,
                "x": new.x,
                "y": new.y,
                "x_norm": round(x_norm, 9),
                "y_norm": round(y_norm, 9),
                "ttft_p": math.nan if ttft_p is None else round(ttft_p, 9),
                "tpot_p": math.nan if tpot_p is None else round(tpot_p, 9),
                "est_ttft": round(est_ttft, 9),
                "est_tpot": round(est_tpot, 9),
                "action": action,
            }
        )
        logging.debug(f"controller window {self.window}: {current.label()} -> {new.label()} ({action})")
        self.window += 1
        self._window_start = now
        self._area = [0.0, 0.0]
        self._reset_buffers()
        return new

    def _prior(self, now: float) -> LatencyModel | None:
        span = now - self._window_start
        if not self._input_lens or not self._decode_l100s or span <= 0:
            return None
        mean_input = sum(self._input_lens) / len(self._input_lens)
        decode = sum(self._decode_l100s) / len(self._decode_l100s)
        return LatencyModel.prior(self._arrivals / span, self.prefill_l100(mean_input), decode)
