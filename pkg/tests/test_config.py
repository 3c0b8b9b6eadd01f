from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refrigctl import config as cfgmod
from refrigctl.config import RunConfig
from refrigctl.scenario import perturb_food_mass
from refrigctl.thermo import ConfigError, Topology, default_params


class TestRoundTrip:
    def test_defaults_bit_exact(self, tmp_path):
        cfg = RunConfig.defaults()
        back = cfgmod.load(cfgmod.dump(cfg, tmp_path / "c.yaml"))
        assert back == cfg
        assert back.params == default_params()[0]
        assert cfgmod.dumps(back) == cfgmod.dumps(cfg)

    def test_every_key_has_units(self):
        for line in cfgmod.dumps(RunConfig.defaults()).splitlines()[1:]:
            if line.startswith("  "):
                assert "  # " in line

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000), st.floats(1e-3, 1e3, allow_nan=False),
           st.floats(0.0, 5.0))
    def test_awkward_floats(self, n, seed, kn, delta):
        p, _ = default_params(n)
        p = replace(p, m_food=tuple(perturb_food_mass(200.0, seed, n)), K_P=0.1 + 1e-17 * seed)
        cfg = RunConfig(p, Topology.chain(n, kn), delta=delta, k_neighbor=kn, seed=seed)
        back = cfgmod.loads(cfgmod.dumps(cfg))
        assert back == cfg

    def test_explicit_matrix(self):
        p, _ = default_params(3)
        topo = Topology.from_matrix([[0, 1.5, 0], [1.5, 0, 0.25], [0, 0.25, 0]])
        back = cfgmod.loads(cfgmod.dumps(RunConfig(p, topo)))
        assert back.topology == topo

    def test_ring(self):
        p, _ = default_params(5)
        cfg = RunConfig(p, Topology.ring(5, 300.0), k_neighbor=300.0)
        text = cfgmod.dumps(cfg)
        assert "topology: ring" in text
        assert cfgmod.loads(text).topology == cfg.topology


class TestValidation:
    def test_empty_file_is_defaults(self):
        assert cfgmod.loads("") == RunConfig.defaults()

    def test_unknown_keys(self):
        with pytest.raises(ConfigError) as exc:
            cfgmod.loads("plant:\n  bogus: 1\ncontroller:\n  horizon: 3\nextras: {}\n")
        assert len(exc.value.violations) == 3

    def test_each_invariant_named(self):
        with pytest.raises(ConfigError) as exc:
            cfgmod.loads("plant:\n  eta: 2.0\n  dt: 0\n  m_air: -1\n")
        text = " ".join(exc.value.violations)
        assert "eta" in text and "dt" in text and "m_air" in text

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            cfgmod.loads("plant:\n  n_c: 2.5\n")
        with pytest.raises(ConfigError):
            cfgmod.loads("plant:\n  T_amb: warm\n")
        with pytest.raises(ConfigError):
            cfgmod.loads("scenario:\n  perturb_food_mass: 1\n")

    def test_list_length(self):
        with pytest.raises(ConfigError):
            cfgmod.loads("plant:\n  n: 3\n  m_food: [200.0, 210.0]\n")

    def test_controller_ranges(self):
        with pytest.raises(ConfigError):
            cfgmod.loads("controller:\n  delta: -1.0\n")
        with pytest.raises(ConfigError):
            cfgmod.loads("scenario:\n  dr_cap_fraction: 1.5\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            cfgmod.load(tmp_path / "absent.yaml")

    def test_bad_yaml(self):
        with pytest.raises(ConfigError):
            cfgmod.loads("plant: [unclosed\n")

    def test_relative_price_path(self, tmp_path):
        (tmp_path / "c.yaml").write_text("scenario:\n  prices: p.csv\n")
        assert cfgmod.load(tmp_path / "c.yaml").prices == str(tmp_path / "p.csv")

    def test_scenario_mapping(self):
        cfg = cfgmod.loads("controller:\n  delta: 2.0\nscenario:\n  duration_s: 600\n  seed: 4\n")
        sc = cfg.scenario("greedy")
        assert (sc.delta, sc.duration_s, sc.seed, sc.controller) == (2.0, 600.0, 4, "greedy")
        assert cfg.scenario("pi", seed=9, duration_s=60.0).seed == 9
