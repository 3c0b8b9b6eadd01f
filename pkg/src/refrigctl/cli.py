"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error,
3 property violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from refrigctl import config as cfgmod
from refrigctl import oracle
from refrigctl.plant import IntegrationError
from refrigctl.scenario import (
    PriceError,
    PriceSeries,
    default_price_series,
    run_closed_loop,
    savings,
)
from refrigctl.thermo import ConfigError, default_params

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_PROPERTY = 0, 1, 2, 3
LOG_ENV = "REFRIGCTL_LOG_LEVEL"
SUITES = ("theorems", "gradient", "oracle", "all")

log = logging.getLogger("refrigctl")


class OutputExists(Exception):
    pass


class OutputDir:
    """Places every file under one directory and applies the overwrite policy."""

    def __init__(self, root, policy: str = "suffix"):
        self.root = Path(root)
        self.policy = policy

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        target = self.root / name
        if not target.exists() or self.policy == "overwrite":
            return target
        if self.policy == "refuse":
            raise OutputExists(f"{target} exists (use --on-exists suffix or overwrite)")
        stem, suffix = target.stem, target.suffix
        k = 1
        while (self.root / f"{stem}-{k}{suffix}").exists():
            k += 1
        return self.root / f"{stem}-{k}{suffix}"

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return p


def _load_config(args) -> cfgmod.RunConfig:
    if args.config is None:
        return cfgmod.RunConfig.defaults()
    return cfgmod.load(args.config)


def _prices(args, cfg, required: bool = False) -> PriceSeries | None:
    if getattr(args, "prices", None):
        return PriceSeries.from_csv(args.prices)
    if cfg.prices:
        return PriceSeries.from_csv(cfg.prices)
    return default_price_series() if required else None


def _run(cfg, controller, args, prices=None):
    sc = cfg.scenario(controller, seed=args.seed, duration_s=args.duration_s, prices=prices)
    log.info("running %s for %.0f s", controller, sc.duration_s)
    return run_closed_loop(sc)


def _save_run(out: OutputDir, res, tag: str):
    res.trajectory.to_csv(out.path(f"trajectory_{tag}.csv"))
    out.write_json(f"metrics_{tag}.json", res.metrics_record())
    if res.config.controller != "pi":
        res.controller.write_log(out.path(f"diagnostics_{tag}.csv"))


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    prices = _prices(args, cfg)
    res = _run(cfg, args.controller, args, prices)
    out = OutputDir(args.out, args.on_exists)
    _save_run(out, res, args.controller)
    print(json.dumps(res.metrics.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    out = OutputDir(args.out, args.on_exists)
    runs = {c: _run(cfg, c, args) for c in ("pi", "linear", "greedy")}
    for c, r in runs.items():
        _save_run(out, r, c)
    base = runs["pi"].metrics
    table = {"seed": runs["pi"].config.seed, "pi": base.to_dict()}
    for c in ("linear", "greedy"):
        m = runs[c].metrics
        table[c] = {**m.to_dict(),
                    "energy_saving_pct": savings(base.avg_power_kw, m.avg_power_kw),
                    "switching_reduction_pct": savings(base.switchings, m.switchings)}
    out.write_json("comparison.json", table)
    print(json.dumps(table, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_dr(args) -> int:
    cfg = _load_config(args)
    prices = _prices(args, cfg, required=True)
    out = OutputDir(args.out, args.on_exists)
    runs = {c: _run(cfg, c, args, prices) for c in ("pi", "linear", "greedy")}
    for c, r in runs.items():
        _save_run(out, r, c)
    base = runs["pi"].metrics.energy_cost_usd
    table = {"seed": runs["pi"].config.seed, "costs_usd": {}, "cost_saving_pct": {},
             "cap_respected": {}, "max_excursion": {}}
    for c, r in runs.items():
        m = r.metrics
        table["costs_usd"][c] = m.energy_cost_usd
        table["max_excursion"][c] = m.max_excursion
        if c != "pi":
            table["cost_saving_pct"][c] = savings(base, m.energy_cost_usd)
            ok = all(K <= cap for _, K, cap, _ in r.decisions if cap is not None)
            table["cap_respected"][c] = ok
            if not ok:
                log.error("valve cap violated by %s", c)
    out.write_json("dr.json", table)
    print(json.dumps(table, indent=2, sort_keys=True))
    return EXIT_OK if all(table["cap_respected"].values()) else EXIT_PROPERTY


def verify_reports(suite: str, seed: int = 0, evap_sign: float = 1.0) -> list[oracle.PropertyReport]:
    reports = []
    if suite in ("theorems", "all"):
        sub = oracle.PropertyReport("submodularity and monotonicity of V")
        for s in range(seed, seed + 20):
            r = oracle.check_submodularity(oracle.random_instance(5, s))
            r.seeds.append(s)
            sub.merge(r)
        reports.append(sub)
        params, topo = default_params(10)
        reports.append(oracle.check_monotone_dynamics(params, topo, 100, seed, evap_sign=evap_sign))
    if suite in ("gradient", "all"):
        probs = [oracle.random_instance(10, s) for s in range(seed, seed + 20)]
        rep = oracle.check_gradient(probs)
        rep.seeds = list(range(seed, seed + 20))
        reports.append(rep)
    if suite in ("oracle", "all"):
        probs = [oracle.random_instance(8, s) for s in range(seed, seed + 50)]
        for check in (oracle.check_posterior_bound, oracle.check_greedy_bound,
                      oracle.check_bilevel_greedy_count):
            rep = check(probs)
            rep.seeds = list(range(seed, seed + 50))
            reports.append(rep)
    return reports


def cmd_verify(args) -> int:
    evap_sign = -1.0 if args.inject_evap_sign_fault else 1.0
    reports = verify_reports(args.suite, args.seed or 0, evap_sign)
    for r in reports:
        print(r.summary())
    if args.out:
        OutputDir(args.out, args.on_exists).write_json(
            f"verify_{args.suite}.json", [r.to_dict() for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_PROPERTY


def cmd_export_defaults(args) -> int:
    out = OutputDir(args.out, args.on_exists)
    path = cfgmod.dump(cfgmod.RunConfig.defaults(), out.path("defaults.yaml"))
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refrigctl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, controller=False, prices=False):
        p.add_argument("--config", type=Path, help="YAML configuration (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--duration-s", type=float, default=None, help="override the run length")
        p.add_argument("--on-exists", choices=("suffix", "refuse", "overwrite"), default="suffix")
        if controller:
            p.add_argument("--controller", choices=("pi", "linear", "greedy", "oracle"), default="pi")
        if prices:
            p.add_argument("--prices", type=Path, help="price CSV: time_s,price_usd_per_kwh")

    common(sub.add_parser("simulate", help="one closed-loop run"), controller=True, prices=True)
    common(sub.add_parser("compare", help="PI vs both optimizing controllers"))
    common(sub.add_parser("dr", help="real-time pricing run with valve capping"), prices=True)
    v = sub.add_parser("verify", help="property suites")
    v.add_argument("--suite", choices=SUITES, default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path, default=None)
    v.add_argument("--on-exists", choices=("suffix", "refuse", "overwrite"), default="suffix")
    v.add_argument("--inject-evap-sign-fault", action="store_true", help=argparse.SUPPRESS)
    e = sub.add_parser("export-defaults", help="write the default configuration")
    e.add_argument("--out", type=Path, default=Path("."))
    e.add_argument("--on-exists", choices=("suffix", "refuse", "overwrite"), default="suffix")
    return parser


COMMANDS = {"simulate": cmd_simulate, "compare": cmd_compare, "dr": cmd_dr,
            "verify": cmd_verify, "export-defaults": cmd_export_defaults}


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except PriceError as exc:
        print(f"price error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputExists as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"runtime error at t={exc.time} s in {exc.variable}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
