import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refrigctl.plant import Trajectory
from refrigctl.scenario import (
    PriceError,
    PriceSeries,
    ScenarioConfig,
    compute_metrics,
    count_switchings,
    default_price_series,
    dr_cap_policy,
    energy_and_cost,
    perturb_food_mass,
    run_closed_loop,
)
from refrigctl.thermo import ConfigError, default_params


def synthetic_trajectory(comp_rows, power_w, h=60.0, n=1):
    m = len(comp_rows)
    times = np.arange(m + 1) * h
    states = np.zeros((m + 1, 2 * n + 1))
    states[:, -1] = 1.4
    comps = np.array(comp_rows, dtype=np.int8).reshape(m, -1)
    return Trajectory(times, states, np.zeros((m, n), dtype=np.int8), comps,
                      np.full(m, float(power_w)), 60.0)


class TestPerturbation:
    def test_range(self):
        m = perturb_food_mass(200.0, 2013, 10)
        assert m.shape == (10,)
        assert np.all((m >= 160) & (m <= 240))

    def test_deterministic(self):
        assert np.array_equal(perturb_food_mass(200.0, 5, 10), perturb_food_mass(200.0, 5, 10))
        assert not np.array_equal(perturb_food_mass(200.0, 5, 10), perturb_food_mass(200.0, 6, 10))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_vector_nominal(self, seed):
        nominal = np.array([100.0, 300.0])
        m = perturb_food_mass(nominal, seed)
        assert np.all(m >= 0.8 * nominal) and np.all(m <= 1.2 * nominal)


class TestSwitchings:
    def test_constant(self):
        assert count_switchings(synthetic_trajectory([[1, 0]] * 5, 0)) == 0

    @pytest.mark.parametrize("m", [2, 5, 9])
    def test_toggle_every_period(self, m):
        rows = [[k % 2] for k in range(m)]
        assert count_switchings(synthetic_trajectory(rows, 0)) == m - 1

    def test_sums_over_compressors(self):
        rows = [[0, 0, 0], [1, 1, 0], [1, 0, 1]]
        assert count_switchings(synthetic_trajectory(rows, 0)) == 4

    def test_only_period_boundaries_count(self):
        tr = synthetic_trajectory([[0], [1], [0], [1]], 0, h=30.0)
        # boundaries at 0 s and 60 s see 0 and 0
        assert count_switchings(tr) == 0


class TestPricing:
    def test_zero_price(self):
        tr = synthetic_trajectory([[1]] * 60, 10_000.0)
        assert energy_and_cost(tr, PriceSeries.constant(0.0)).cost_usd == 0.0

    def test_ten_kw_for_an_hour(self):
        tr = synthetic_trajectory([[1]] * 60, 10_000.0)
        cost, kwh, extrapolated = energy_and_cost(tr, PriceSeries.constant(0.10))
        assert cost == pytest.approx(1.00, rel=1e-12)
        assert kwh == pytest.approx(10.0, rel=1e-12)
        assert not extrapolated

    def test_step_prices(self):
        tr = synthetic_trajectory([[1]] * 60, 60_000.0)   # 1 kWh per minute
        prices = PriceSeries((0.0, 1800.0), (0.1, 0.3))
        assert energy_and_cost(tr, prices).cost_usd == pytest.approx(30 * 0.1 + 30 * 0.3)

    def test_extension_flagged(self):
        tr = synthetic_trajectory([[1]] * 2, 1000.0)
        assert energy_and_cost(tr, PriceSeries((30.0,), (0.2,))).extrapolated

    def test_series_invariants(self):
        with pytest.raises(PriceError):
            PriceSeries((), ())
        with pytest.raises(PriceError):
            PriceSeries((0.0, 0.0), (0.1, 0.1))
        with pytest.raises(PriceError):
            PriceSeries((0.0,), (-0.1,))

    def test_csv_round_trip(self, tmp_path):
        s = default_price_series()
        assert PriceSeries.from_csv(s.to_csv(tmp_path / "p.csv")) == s

    @pytest.mark.parametrize("body,line", [
        ("time_s,price_usd_per_kwh\n0,0.1\n60,abc\n", 3),
        ("time_s,price_usd_per_kwh\n0,0.1\n0,0.2\n", 3),
        ("time_s,price_usd_per_kwh\n0,0.1,9\n", 2),
        ("time,price\n0,0.1\n", 1),
        ("time_s,price_usd_per_kwh\n0,-1\n", 2),
    ])
    def test_csv_errors_name_line(self, tmp_path, body, line):
        path = tmp_path / "p.csv"
        path.write_text(body)
        with pytest.raises(PriceError) as exc:
            PriceSeries.from_csv(path)
        assert exc.value.line == line

    def test_default_series_shape(self):
        s = default_price_series()
        assert s.price_at(0) == 0.04 and s.price_at(15000) == 0.25 and s.price_at(19000) == 0.04
        assert sum(b - a for a, b, p in zip(s.times, s.times[1:] + (28800.0,), s.prices) if p > 0.1) == 7200


class TestCapPolicy:
    @pytest.mark.parametrize("price,cap", [(0.05, 10), (0.15, 7), (0.1, 10), (0.1000001, 7)])
    def test_examples(self, price, cap):
        assert dr_cap_policy(price, 10, 0.1, 0.7) == cap

    @given(st.integers(1, 100), st.floats(0.01, 1.0))
    def test_cap_bounds(self, n, frac):
        cap = dr_cap_policy(1.0, n, 0.1, frac)
        assert 0 <= cap <= n


class TestClosedLoop:
    def test_config_invariants(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(duration_s=0)
        with pytest.raises(ConfigError):
            ScenarioConfig(dr_cap_fraction=0.0)
        with pytest.raises(ConfigError):
            ScenarioConfig(controller="bang-bang")

    def test_one_period_one_decision(self):
        res = run_closed_loop(ScenarioConfig(controller="linear", duration_s=60.0))
        assert len(res.decisions) == 1
        assert len(res.trajectory.times) == 61

    def test_deterministic(self):
        cfg = dict(controller="greedy", duration_s=600.0, n=5)
        a = run_closed_loop(ScenarioConfig(**cfg))
        b = run_closed_loop(ScenarioConfig(**cfg))
        assert np.array_equal(a.trajectory.states, b.trajectory.states)
        assert a.metrics == b.metrics

    def test_perturbation_applied(self):
        res = run_closed_loop(ScenarioConfig(duration_s=60.0))
        assert res.params.m_food == tuple(perturb_food_mass(200.0, 2013, 10))

    def test_metrics_survive_csv_round_trip(self, tmp_path):
        res = run_closed_loop(ScenarioConfig(controller="linear", duration_s=900.0, n=4))
        back = Trajectory.from_csv(res.trajectory.to_csv(tmp_path / "t.csv", every_step=True))
        assert compute_metrics(back, res.params) == compute_metrics(res.trajectory, res.params)

    def test_cap_enforced_every_capped_period(self):
        prices = PriceSeries((0.0, 600.0), (0.5, 0.04))
        res = run_closed_loop(ScenarioConfig(controller="greedy", duration_s=1200.0, prices=prices,
                                             T0=5.5))
        capped = [(K, cap) for _, K, cap, _ in res.decisions if cap is not None and cap < 10]
        assert len(capped) == 10
        assert all(K <= cap == 7 for K, cap in capped)
        assert res.metrics.max_valves_when_capped <= 7

    def test_pi_ignores_prices(self):
        prices = PriceSeries.constant(0.5)
        res = run_closed_loop(ScenarioConfig(controller="pi", duration_s=600.0, prices=prices))
        assert res.decisions == [] and res.metrics.energy_cost_usd >= 0

    def test_metrics_nonnegative(self):
        res = run_closed_loop(ScenarioConfig(controller="pi", duration_s=1800.0,
                                             prices=default_price_series()))
        m = res.metrics
        for v in (m.avg_power_kw, m.switchings, m.violation_integral, m.max_excursion, m.energy_cost_usd):
            assert v >= 0

    def test_explicit_params(self):
        p, topo = default_params(3)
        res = run_closed_loop(ScenarioConfig(controller="linear", duration_s=120.0, params=p,
                                             topology=topo, perturb=False))
        assert res.params == p
