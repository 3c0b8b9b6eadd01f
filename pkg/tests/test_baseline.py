import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refrigctl.baseline import (
    BaselineController,
    HysteresisState,
    PIState,
    compressor_thresholding,
    hysteresis_valve_law,
    pi_error,
    pi_output,
)
from refrigctl.plant import PlantState
from refrigctl.thermo import default_params


@pytest.fixture
def p1():
    return default_params(1)[0]


class TestHysteresis:
    def test_branches(self, p1):
        assert hysteresis_valve_law([5.2], HysteresisState((0,)), p1)[0].tolist() == [1]
        assert hysteresis_valve_law([-0.5], HysteresisState((1,)), p1)[0].tolist() == [0]
        assert hysteresis_valve_law([2.0], HysteresisState((1,)), p1)[0].tolist() == [1]
        assert hysteresis_valve_law([2.0], HysteresisState((0,)), p1)[0].tolist() == [0]

    def test_band_edges_hold(self, p1):
        assert hysteresis_valve_law([5.0], HysteresisState((0,)), p1)[0].tolist() == [0]
        assert hysteresis_valve_law([0.0], HysteresisState((1,)), p1)[0].tolist() == [1]

    @given(st.lists(st.floats(-5, 10), min_size=3, max_size=3), st.lists(st.integers(0, 1), min_size=3, max_size=3))
    def test_state_carries_output(self, temps, prev):
        p = default_params(3)[0]
        u, h = hysteresis_valve_law(temps, HysteresisState(tuple(prev)), p)
        assert h.previous == tuple(u.tolist())
        # a second pass with the same temperatures is a fixed point
        assert hysteresis_valve_law(temps, h, p)[0].tolist() == u.tolist()


class TestPI:
    @pytest.mark.parametrize("P,e", [(1.9, 0.5), (1.5, 0.0), (1.0, -0.4), (1.69, 0.0), (1.11, 0.0)])
    def test_error(self, p1, P, e):
        assert pi_error(P, p1) == pytest.approx(e, abs=1e-12)

    def test_zero_error(self, p1):
        out, st_ = pi_output(0.0, PIState(), 1.0, p1)
        assert out == 0.0 and st_.integral == 0.0

    def test_worked_output(self, p1):
        out, st_ = pi_output(0.5, PIState(), 10.0, p1)
        assert out == pytest.approx(-6.20)
        assert st_.integral == pytest.approx(5.0)

    @given(st.floats(-1, 1), st.floats(0.1, 100))
    def test_accumulator_additivity(self, e, h):
        p = default_params(1)[0]
        _, a = pi_output(e, PIState(), h, p)
        _, a = pi_output(e, a, h, p)
        _, b = pi_output(e, PIState(), 2 * h, p)
        assert a.integral == pytest.approx(b.integral, rel=1e-12, abs=1e-12)

    def test_step_must_be_positive(self, p1):
        with pytest.raises(ValueError):
            pi_output(0.1, PIState(), 0.0, p1)

    @pytest.mark.parametrize("u,n_on", [(-3.0, 0), (0.0, 0), (0.99, 0), (2.4, 2), (7.0, 7), (100.0, 7)])
    def test_thresholding(self, p1, u, n_on):
        bits = compressor_thresholding(u, p1)
        assert bits.sum() == n_on
        assert bits[:n_on].all()

    def test_thresholding_nan(self, p1):
        with pytest.raises(ValueError):
            compressor_thresholding(float("nan"), p1)


class TestController:
    def test_high_pressure_starts_compressors(self, defaults):
        p, _ = defaults
        ctl = BaselineController(p)
        n_on = [ctl.compressors(1.9).sum() for _ in range(3)]
        assert n_on[-1] > 0
        assert n_on == sorted(n_on)

    def test_low_pressure_stops_compressors(self, defaults):
        p, _ = defaults
        ctl = BaselineController(p)
        for _ in range(3):
            ctl.compressors(1.9)
        for _ in range(10):
            bits = ctl.compressors(0.9)
        assert bits.sum() == 0

    def test_no_windup_below_zero(self, defaults):
        p, _ = defaults
        ctl = BaselineController(p)
        for _ in range(50):
            ctl.compressors(0.5)
        assert ctl.pistate.integral == 0.0
        # a single high sample is enough to start a compressor again
        assert ctl.compressors(1.9).sum() > 0

    def test_dead_band_holds(self, defaults):
        p, _ = defaults
        ctl = BaselineController(p)
        ctl.compressors(1.9)
        held = ctl.compressors(1.45).copy()
        assert np.array_equal(ctl.compressors(1.5), held)

    def test_pi_runs_on_its_period(self, defaults):
        p, _ = defaults
        ctl = BaselineController(p)
        s = PlantState(np.full(10, 3.0), np.full(10, 6.0), 1.9)
        outs = [ctl(float(t), s).u_c.sum() for t in range(0, 121)]
        changes = [t for t in range(1, 121) if outs[t] != outs[t - 1]]
        assert all(t % 60 == 0 for t in changes)
        assert ctl(121.0, s).u.all()

    def test_reset(self, defaults):
        p, _ = defaults
        ctl = BaselineController(p)
        ctl(0.0, PlantState(np.full(10, 3.0), np.full(10, 6.0), 1.9))
        ctl.reset()
        assert ctl.pistate == PIState() and ctl.hstate == HysteresisState.closed(10)
