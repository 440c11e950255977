"""Tests for the latency model fit, the adjustment rule and the M/M/1 reference queue."""

import math
import sys
from pathlib import Path

import pytest

# Add src to Python path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from analysis.slo import SloConfig  # noqa: E402
from control.controller import (  # noqa: E402
    ControllerConfig,
    PartitionController,
    adjust_partition,
    observe_window,
)
from control.fitting import (  # noqa: E402
    LatencyModel,
    Observation,
    estimate_tpot,
    estimate_ttft,
    fit_latency_model,
    fit_tpot,
    fit_ttft,
)
from control.queueing import mm1_sojourn, simulate_mm1  # noqa: E402
from serving.engines.base import RequestRecord  # noqa: E402
from serving.resource import PartitionConfig  # noqa: E402
from workload.trace import Request  # noqa: E402

SLO = SloConfig(ttft_slo=0.16, tpot_slo=0.15)


def _obs(ttft: float | None, tpot: float | None, x: float = 50.0, y: float = 50.0) -> Observation:
    return Observation(0, x, y, ttft, tpot)


class TestEstimates:
    """Closed-form estimates of the latency model."""

    def test_ttft(self) -> None:
        """Test the TTFT estimate at a given prefill share."""
        m = LatencyModel(a1=5, b1=0.05, lam=20, a2=8, b2=0.01)
        assert estimate_ttft(m, 70) == pytest.approx(0.15)

    def test_tpot(self) -> None:
        """Test the TPOT estimate at a given decode share."""
        m = LatencyModel(a1=5, b1=0.05, lam=20, a2=8, b2=0.01)
        assert estimate_tpot(m, 40) == pytest.approx(0.21)

    def test_saturated_at_the_pole(self) -> None:
        """Test saturated at the pole."""
        m = LatencyModel(a1=5, b1=0.05, lam=20, a2=8, b2=0.01)
        assert estimate_ttft(m, 20) == math.inf
        assert estimate_ttft(m, 10) == math.inf

    def test_prior_matches_queueing_model(self) -> None:
        """Test prior matches queueing model."""
        m = LatencyModel.prior(rate=2.0, prefill_l100=0.04, decode_l100=0.03)
        assert m.a1 == pytest.approx(4.0)
        assert m.lam == pytest.approx(8.0)
        assert m.rate == pytest.approx(2.0)
        # share 50 -> mu = 50 / (100 * 0.04) = 12.5 req/s
        assert estimate_ttft(m, 50) == pytest.approx(mm1_sojourn(12.5, 2.0))
        assert estimate_tpot(m, 100) == pytest.approx(0.03)


class TestFit:
    """Least-squares recovery of known curves."""

    def test_tpot_exact(self) -> None:
        """Test exact recovery of a noiseless TPOT curve."""
        shares = [20, 30, 40, 50, 60, 70, 80]
        a2, b2, r2, degraded = fit_tpot(shares, [8 / y + 0.01 for y in shares])
        assert a2 == pytest.approx(8, abs=1e-9)
        assert b2 == pytest.approx(0.01, abs=1e-9)
        assert r2 == pytest.approx(1.0)
        assert not degraded

    def test_ttft_recovers_lambda(self) -> None:
        """Test TTFT recovers lambda."""
        shares = [30, 40, 50, 60, 70, 80, 90]
        a1, b1, lam, r2, _ = fit_ttft(shares, [5 / (x - 20) + 0.05 for x in shares])
        assert a1 == pytest.approx(5, abs=1e-6)
        assert lam == pytest.approx(20, abs=1e-6)
        assert b1 == pytest.approx(0.05, abs=1e-6)
        assert r2 == pytest.approx(1.0)

    def test_lambda_stays_below_smallest_share(self) -> None:
        """Test lambda stays below smallest share."""
        shares = [10, 15, 25]
        _, _, lam, _, _ = fit_ttft(shares, [0.5, 0.3, 0.2])
        assert 0 <= lam <= 10 - 0.5

    def test_negative_slope_is_clamped(self) -> None:
        """Test negative slope is clamped."""
        a2, b2, _, degraded = fit_tpot([20, 40, 80], [0.01, 0.02, 0.03])
        assert degraded
        assert a2 == 0.0
        assert b2 == pytest.approx(0.02)

    def test_model_from_history(self) -> None:
        """Test model from history."""
        history = [
            Observation(i, x, 100 - x, 5 / (x - 20) + 0.05, 8 / (100 - x) + 0.01) for i, x in enumerate([30, 50, 70])
        ]
        m = fit_latency_model(history)
        assert m is not None
        assert m.lam == pytest.approx(20)
        assert m.a2 == pytest.approx(8)
        assert m.source == "fit"

    def test_single_observation_keeps_previous(self) -> None:
        """Test single observation keeps previous."""
        prior = LatencyModel.prior(1.0, 0.04, 0.03)
        assert fit_latency_model([_obs(0.2, 0.05)], prior) is prior
        assert fit_latency_model([_obs(0.2, 0.05)]) is None

    def test_one_side_refit_keeps_the_other(self) -> None:
        """Test one side refit keeps the other."""
        prior = LatencyModel.prior(1.0, 0.04, 0.03)
        history = [Observation(i, 50, y, None, 8 / y) for i, y in enumerate([20, 40, 60])]
        m = fit_latency_model(history, prior)
        assert m is not None
        assert m.a1 == prior.a1
        assert m.a2 == pytest.approx(8)


class TestObserveWindow:
    def test_percentiles(self) -> None:
        """Test window percentiles per side."""
        ttft, tpot = observe_window([0.1 * k for k in range(1, 11)], [0.05], 0.9)
        assert ttft == pytest.approx(0.9)
        assert tpot == 0.05

    def test_empty_side(self) -> None:
        """Test that a side without samples reports None."""
        assert observe_window([], [0.1], 0.9) == (None, 0.1)
        assert observe_window([], [], 0.9) == (None, None)


class TestAdjustPartition:
    """The windowed adjustment rule."""

    MODEL = LatencyModel(a1=5, b1=0.0, lam=20, a2=1, b2=0.0)

    def test_off_window_iteration(self) -> None:
        """Test off window iteration."""
        cfg = ControllerConfig(window_size=10)
        current = PartitionConfig(x=60, y=60)
        assert adjust_partition(7, current, SLO, cfg, self.MODEL, _obs(1.0, 0.01)) == current

    def test_both_fail_keeps_partition(self) -> None:
        """Test both fail keeps partition."""
        current = PartitionConfig(x=60, y=60)
        assert adjust_partition(200, current, SLO, ControllerConfig(), self.MODEL, _obs(1.0, 1.0)) == current

    def test_both_pass_keeps_partition(self) -> None:
        """Test both pass keeps partition."""
        current = PartitionConfig(x=60, y=60)
        assert adjust_partition(200, current, SLO, ControllerConfig(), self.MODEL, _obs(0.1, 0.01)) == current

    def test_ttft_fails_one_step(self) -> None:
        """Test TTFT fails one step."""
        # x' = 50 -> 5/30 > 0.16; after one step x' = 52 -> 5/32 <= 0.16
        new = adjust_partition(200, PartitionConfig(x=60, y=60), SLO, ControllerConfig(), self.MODEL, _obs(0.5, 0.01))
        assert new == PartitionConfig(x=65, y=60)

    def test_overflow_shrinks_the_other_side(self) -> None:
        """Test overflow shrinks the other side."""
        saturated = LatencyModel(a1=5, b1=0.0, lam=99, a2=1, b2=0.0)
        cfg = ControllerConfig(max_step=1)
        new = adjust_partition(200, PartitionConfig(x=100, y=60), SLO, cfg, saturated, _obs(0.5, 0.01))
        assert new == PartitionConfig(x=100, y=55)

    def test_total_change_bounded(self) -> None:
        """Test total change bounded."""
        saturated = LatencyModel(a1=5, b1=0.0, lam=99, a2=1, b2=0.0)
        new = adjust_partition(200, PartitionConfig(x=100, y=60), SLO, ControllerConfig(), saturated, _obs(0.5, 0.01))
        assert new == PartitionConfig(x=100, y=30)

    def test_other_side_never_reaches_zero(self) -> None:
        """Test other side never reaches zero."""
        saturated = LatencyModel(a1=5, b1=0.0, lam=99, a2=1, b2=0.0)
        current = PartitionConfig(x=100, y=5)
        assert adjust_partition(200, current, SLO, ControllerConfig(), saturated, _obs(0.5, 0.01)) == current

    def test_tpot_fails_grows_y(self) -> None:
        """Test TPOT fails grows y."""
        model = LatencyModel(a1=1, b1=0.0, lam=0, a2=8, b2=0.0)
        new = adjust_partition(200, PartitionConfig(x=80, y=40), SLO, ControllerConfig(), model, _obs(0.01, 0.5))
        assert new.x == 80
        assert 40 < new.y <= 70

    def test_bounds_hold_everywhere(self) -> None:
        """Test bounds hold everywhere."""
        cfg = ControllerConfig()
        for x in range(5, 101, 5):
            for y in range(5, 101, 5):
                for obs in (_obs(1.0, 0.01), _obs(0.01, 1.0)):
                    new = adjust_partition(200, PartitionConfig(x=x, y=y), SLO, cfg, self.MODEL, obs)
                    assert 0 < new.x <= 100 and 0 < new.y <= 100
                    assert abs(new.x - x) <= cfg.max_step * cfg.step_size
                    assert abs(new.y - y) <= cfg.max_step * cfg.step_size


class TestPartitionController:
    """Windowed bookkeeping of the controller."""

    def _controller(self) -> PartitionController:
        return PartitionController(SLO, ControllerConfig(window_size=1), PartitionConfig(x=100, y=100), lambda n: 0.04)

    def _served(self, rid: int, arrival: float, ttft: float) -> RequestRecord:
        rec = RequestRecord(Request(rid, arrival, 251, 11))
        rec.prefill_done = arrival + ttft
        rec.completed = rec.prefill_done + 0.5
        return rec

    def test_warmup_without_samples(self) -> None:
        """Test warmup without samples."""
        c = self._controller()
        new = c.on_tick(1.0, 1, PartitionConfig(x=100, y=100))
        assert new == PartitionConfig(x=100, y=100)
        assert c.log[0]["action"] == "warmup"

    def test_prior_drives_first_decision(self) -> None:
        """Test prior drives first decision."""
        c = self._controller()
        for i in range(10):
            c.record_arrival(i * 0.1)
            rec = self._served(i, i * 0.1, 0.9)
            c.record_prefill(rec)
            c.record_completion(rec)
            c.record_decode_iteration(0.001)
        new = c.on_tick(1.0, 1, PartitionConfig(x=60, y=100))
        assert c.model is not None and c.model.source == "prior"
        assert new.x > 60
        row = c.log[-1]
        assert row["action"] == "increase-x"
        assert row["x_norm"] == pytest.approx(50.0)

    def test_time_weighted_shares(self) -> None:
        """Test time weighted shares."""
        c = self._controller()
        c.partition_changed(1.0, PartitionConfig(x=30, y=70))
        c.record_prefill(self._served(0, 0.0, 0.1))
        c.on_tick(2.0, 1, PartitionConfig(x=30, y=70))
        # one second at (50, 50) and one at (30, 70)
        assert c.log[0]["x_norm"] == pytest.approx(40.0)
        assert c.log[0]["y_norm"] == pytest.approx(60.0)


class TestQueueing:
    """M/M/1 reference queue."""

    def test_closed_form(self) -> None:
        """Test the single-server queue sojourn time."""
        assert mm1_sojourn(10.0, 5.0) == pytest.approx(0.2)

    def test_unstable(self) -> None:
        """Test that an arrival rate at the service rate is rejected."""
        with pytest.raises(ValueError, match="unstable"):
            mm1_sojourn(5.0, 5.0)

    def test_simulation_matches_closed_form(self) -> None:
        """Test simulation matches closed form."""
        simulated = simulate_mm1(r=5.0, mu=10.0, count=100_000, seed=1)
        assert simulated == pytest.approx(mm1_sojourn(10.0, 5.0), rel=0.05)
