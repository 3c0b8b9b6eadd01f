import json

import pytest

from refrigctl.cli import main


def run(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert run("simulate", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == 2

    def test_bad_config_lists_violations(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("plant:\n  eta: 2.0\n  V_suc: -1\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 2
        err = capsys.readouterr().err
        assert "eta" in err and "V_suc" in err

    def test_malformed_prices(self, tmp_path, capsys):
        prices = tmp_path / "p.csv"
        prices.write_text("time_s,price_usd_per_kwh\n0,0.1\n60,abc\n")
        assert run("dr", "--prices", prices, "--duration-s", 60, "--out", tmp_path / "o") == 2
        assert "line 3" in capsys.readouterr().err

    def test_runtime_failure(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        # a tiny manifold lets the compressors pull the pressure below zero
        cfg.write_text("plant:\n  V_suc: 0.0001\nscenario:\n  P0: 2.0\n")
        assert run("simulate", "--config", cfg, "--controller", "pi", "--duration-s", 600,
                   "--out", tmp_path / "o") == 1
        assert "t=" in capsys.readouterr().err


class TestSimulate:
    def test_smoke_and_determinism(self, tmp_path):
        out = tmp_path / "o"
        assert run("simulate", "--controller", "pi", "--duration-s", 300, "--out", out) == 0
        assert run("simulate", "--controller", "pi", "--duration-s", 300, "--out", out) == 0
        a = (out / "metrics_pi.json").read_bytes()
        b = (out / "metrics_pi-1.json").read_bytes()
        assert a == b
        assert (out / "trajectory_pi.csv").exists()
        rec = json.loads(a)
        assert rec["seed"] == 2013 and set(rec["metrics"]) >= {
            "avg_power_kw", "switchings", "violation_integral", "max_excursion", "energy_cost_usd"}

    def test_refuse_policy(self, tmp_path):
        out = tmp_path / "o"
        assert run("simulate", "--duration-s", 60, "--out", out) == 0
        assert run("simulate", "--duration-s", 60, "--out", out, "--on-exists", "refuse") == 2

    def test_overwrite_policy(self, tmp_path):
        out = tmp_path / "o"
        for _ in range(2):
            assert run("simulate", "--duration-s", 60, "--out", out, "--on-exists", "overwrite") == 0
        assert sorted(p.name for p in out.iterdir()) == ["metrics_pi.json", "trajectory_pi.csv"]

    def test_optimizing_writes_diagnostics(self, tmp_path):
        out = tmp_path / "o"
        assert run("simulate", "--controller", "linear", "--duration-s", 180, "--out", out) == 0
        lines = (out / "diagnostics_linear.csv").read_text().splitlines()
        assert lines[0] == "time_s,K,J,V,rho" and len(lines) == 4

    def test_seed_flag(self, tmp_path):
        out = tmp_path / "o"
        assert run("simulate", "--duration-s", 60, "--seed", 11, "--out", out) == 0
        assert json.loads((out / "metrics_pi.json").read_text())["seed"] == 11


class TestOtherCommands:
    def test_compare_schema(self, tmp_path, capsys):
        assert run("compare", "--duration-s", 600, "--out", tmp_path) == 0
        table = json.loads((tmp_path / "comparison.json").read_text())
        for c in ("linear", "greedy"):
            assert "energy_saving_pct" in table[c] and "switching_reduction_pct" in table[c]

    def test_dr_zero_prices(self, tmp_path):
        prices = tmp_path / "p.csv"
        prices.write_text("time_s,price_usd_per_kwh\n0,0.0\n")
        assert run("dr", "--prices", prices, "--duration-s", 300, "--out", tmp_path / "o") == 0
        table = json.loads((tmp_path / "o" / "dr.json").read_text())
        assert set(table["costs_usd"].values()) == {0.0}
        assert all(table["cap_respected"].values())

    def test_export_defaults(self, tmp_path):
        assert run("export-defaults", "--out", tmp_path) == 0
        text = (tmp_path / "defaults.yaml").read_text()
        assert "k_food_air: 300.0" in text and "P_ref: 1.4" in text

    def test_verify_gradient(self, tmp_path, capsys):
        assert run("verify", "--suite", "gradient", "--out", tmp_path) == 0
        assert "PASS" in capsys.readouterr().out
        rep = json.loads((tmp_path / "verify_gradient.json").read_text())
        assert rep[0]["passed"] and rep[0]["instances"] == 20

    @pytest.mark.slow
    def test_verify_detects_injected_fault(self, capsys):
        assert run("verify", "--suite", "theorems", "--inject-evap-sign-fault") == 3
        assert "FAIL input-monotone" in capsys.readouterr().out

    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            main([])
