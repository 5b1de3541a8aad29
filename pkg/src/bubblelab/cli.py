"""bubblelab command line.

    bubblelab run <config.toml>      price every payoff x method cell, write CSV + JSON
    bubblelab verify <config.toml>   run the identity suite, PASS/FAIL per line
    bubblelab table6                 maturity/strike asymptotics table for the benchmark pair

Runs are deterministic: identical configs produce byte-identical CSV files,
and the JSON manifest differs only in its timing block.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from importlib import metadata

import numpy as np

from . import closedform, duality, pricers
from .config import ExperimentConfig, build_payoff, parse_config
from .engine import dump_paths, simulate_p, simulate_q, simulate_two_asset
from .errors import BubbleLabError
from .stats import combined_se
from .verify import standard_suite

SCHEMA = "bubblelab.v1"


def _build_id() -> str:
    try:
        return "bubblelab-" + metadata.version("bubblelab")
    except metadata.PackageNotFoundError:  # running from a source tree
        return "bubblelab-src"


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _price_cell(cfg: ExperimentConfig, cell, method: str):
    """One (payoff, method) price; raises BubbleLabError on unsupported combos."""
    sim = cfg.sim
    model = cfg.model

    if cell.kind == "exchange":
        if method == "closed_form":
            if model.kind == "TwoAssetCorrelated" and model.rho == 0.0 \
                    and model.params.get("alpha_x") == 2.0 and model.params.get("alpha_y") == 2.0:
                v = closedform.exchange_closed_bes3(model.x0, cell.K, cell.T)
                return duality.PriceEstimate(value=v, std_err=0.0, n_paths=0, method="ClosedForm")
            raise BubbleLabError("closed form needs independent unit-start inverse-Bessel assets")
        spec = pricers.ExchangeSpec(cell.K, cell.T, cell.style)
        return pricers.exchange_lastpassage(
            model, spec, dt=sim.dt, n_paths=sim.n_paths, seed=sim.seed,
            horizon_mult=sim.horizon_sim_multiplier, n_workers=sim.n_workers,
        )

    if cell.kind == "real_world_call":
        quote = pricers.real_world_price(
            model, lambda x, _K=cell.K: np.maximum(x - _K, 0.0), cell.T, eta=1.0,
            dt=sim.dt, n_paths=sim.n_paths, seed=sim.seed,
            horizon_mult=max(1.0, sim.horizon_sim_multiplier), n_workers=sim.n_workers,
        )
        return quote.american if cell.style == "American" else quote.european

    if cell.kind == "barrier":
        ident = pricers.barrier_price(
            model, build_payoff(cell), cell.variant, cell.level,
            dt=sim.dt, n_paths=sim.n_paths, seed=sim.seed, n_workers=sim.n_workers,
        )
        if method == "direct_p":
            return ident.direct
        if method in ("survival_q", "decomposition_q"):
            return ident.dual
        raise BubbleLabError(f"method {method} not defined for barriers")

    payoff = build_payoff(cell)
    kw = dict(dt=sim.dt, n_paths=sim.n_paths, seed=sim.seed, n_workers=sim.n_workers)
    if method == "direct_p":
        return duality.price_direct_p(model, payoff, **kw)
    if method == "survival_q":
        return duality.price_survival_q(model, payoff, **kw)
    if method == "decomposition_q":
        return duality.price_decomposition_q(model, payoff, **kw)
    if method == "corrected":
        return duality.corrected_price(model, payoff, **kw)
    if method == "closed_form":
        if cell.kind == "call" and (model.kind == "InverseBes3" or model.params.get("alpha") == 2.0):
            v = closedform.bes3_call_closed(model.x0, cell.K, cell.T)
            return duality.PriceEstimate(value=v, std_err=0.0, n_paths=0, method="ClosedForm")
        raise BubbleLabError("no closed form for this payoff/model")
    raise BubbleLabError(f"unknown method {method}")


def run_command(config_path: str) -> int:
    cfg = parse_config(config_path)
    t_start = time.time()
    rows = []
    manifest_cells = []
    timings = {}

    for cell in cfg.payoffs:
        estimates = {}
        for method in cfg.methods:
            t0 = time.time()
            try:
                est = _price_cell(cfg, cell, method)
                estimates[method] = est
                manifest_cells.append({
                    "payoff": cell.label(), "method": method, "value": est.value,
                    "std_err": est.std_err,
                    "main_term": None if not np.isfinite(est.main_term) else est.main_term,
                    "default_term": None if not np.isfinite(est.default_term) else est.default_term,
                    "n_paths": est.n_paths, "seed": cfg.sim.seed, "status": "ok",
                })
            except BubbleLabError as exc:
                estimates[method] = None
                manifest_cells.append({
                    "payoff": cell.label(), "method": method, "value": None,
                    "std_err": None, "main_term": None, "default_term": None,
                    "n_paths": 0, "seed": cfg.sim.seed, "status": f"error: {exc}",
                })
            timings[f"{cell.label()}/{method}"] = time.time() - t0

        consistent = ""
        vals = [e for e in estimates.values() if e is not None]
        if len(vals) >= 2:
            ok = all(
                abs(a.value - b.value) <= 3.0 * combined_se(a.std_err, b.std_err) + 1e-12
                for i, a in enumerate(vals) for b in vals[i + 1:]
            )
            consistent = "true" if ok else "false"

        for method in cfg.methods:
            est = estimates[method]
            if est is None:
                rows.append([cell.kind, cfg.model.label, _fmt(cell.K), _fmt(cell.T),
                             cell.style, method, "error", "", "", "", consistent])
            else:
                rows.append([
                    cell.kind, cfg.model.label, _fmt(cell.K), _fmt(cell.T), cell.style,
                    method, _fmt(est.value), _fmt(est.std_err),
                    _fmt(est.main_term), _fmt(est.default_term), consistent,
                ])

    with open(cfg.outputs.csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pricer", "model", "K", "T", "style", "method",
                    "value", "std_err", "main_term", "default_term", "consistent"])
        w.writerows(rows)

    if cfg.outputs.dump_paths:
        ens = simulate_p(cfg.model, cfg.sim.horizon, cfg.sim.dt, min(cfg.sim.n_paths, 1000), cfg.sim.seed) \
            if cfg.model.kind != "TwoAssetCorrelated" else \
            simulate_two_asset(cfg.model, "P", cfg.sim.horizon, cfg.sim.dt, min(cfg.sim.n_paths, 1000), cfg.sim.seed)[0]
        dump_paths(ens, cfg.outputs.csv + ".paths.csv", cfg.outputs.csv + ".paths.json")

    manifest = {
        "schema": SCHEMA,
        "config_hash": cfg.config_hash,
        "seed": cfg.sim.seed,
        "build_id": _build_id(),
        "cells": manifest_cells,
        "timings": {k: round(v, 6) for k, v in sorted(timings.items())},
        "wall_time": round(time.time() - t_start, 6),
    }
    with open(cfg.outputs.json, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {cfg.outputs.csv} and {cfg.outputs.json} ({len(rows)} rows)")
    return 0


def verify_command(config_path: str) -> int:
    cfg = parse_config(config_path)
    payoffs = []
    for cell in cfg.payoffs:
        if cell.kind in ("call", "put", "capped", "reset_call", "ratio_call", "chooser"):
            payoffs.append(build_payoff(cell))
    n_check = min(cfg.sim.n_paths, 100_000)
    checks = standard_suite(
        cfg.model, payoffs, dt=cfg.sim.dt, n_paths=n_check,
        seed=cfg.sim.seed, n_workers=cfg.sim.n_workers,
    )
    failed = 0
    for c in checks:
        print(c.line())
        failed += 0 if c.passed else 1
    print(f"{len(checks) - failed}/{len(checks)} identities passed")
    return 1 if failed else 0


def table6_command(dt: float, n_paths: int, seed: int) -> int:
    """Exchange-value asymptotics for the benchmark strict pair (unit second asset).

    One dual ensemble per maturity carries the last-passage clocks for all
    strikes, so the table costs four simulations.
    """
    from .models import inverse_bes3

    model = inverse_bes3()
    ks = (1e-3, 1.0, 1e3)
    ts = (0.1, 1.0, 4.0, 25.0)
    print(f"{'K':>8} {'T':>6} {'european':>12} {'american':>12} {'closed_call':>12}")
    for T in ts:
        horizon = 4.0 * T
        ens = simulate_q(model, horizon, dt, n_paths, seed,
                         obs_times=(horizon,), rho_levels=tuple(1.0 / k for k in ks))
        for K in ks:
            eur = pricers.exchange_lastpassage(model, pricers.ExchangeSpec(K, T, "European"), z_ensemble=ens)
            ame = pricers.exchange_lastpassage(model, pricers.ExchangeSpec(K, T, "American"), z_ensemble=ens)
            closed = closedform.bes3_call_closed(1.0, K, T)
            print(f"{K:>8g} {T:>6g} {eur.value:>12.6f} {ame.value:>12.6f} {closed:>12.6f}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bubblelab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_ver = sub.add_parser("verify", help="run the identity suite for a config")
    p_ver.add_argument("config")
    p_tab = sub.add_parser("table6", help="strike/maturity asymptotics table")
    p_tab.add_argument("--dt", type=float, default=0.01)
    p_tab.add_argument("--paths", type=int, default=20_000)
    p_tab.add_argument("--seed", type=int, default=2024)
    ns = ap.parse_args(argv)
    try:
        if ns.command == "run":
            return run_command(ns.config)
        if ns.command == "verify":
            return verify_command(ns.config)
        return table6_command(ns.dt, ns.paths, ns.seed)
    except (BubbleLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
