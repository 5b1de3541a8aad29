"""Experiment configuration: one self-contained TOML file, no overrides.

The file fully determines a run (model, payoffs, grid, paths, seed, outputs),
so its hash pins the provenance of every produced number.  Wall-clock seeding
is deliberately impossible: a missing seed is a configuration error.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import models, payoffs as payoff_mod
from .errors import ConfigError

__all__ = ["SimConfig", "PayoffCell", "OutputConfig", "ExperimentConfig", "parse_config"]

METHODS = ("direct_p", "survival_q", "decomposition_q", "closed_form", "corrected")
PAYOFF_KINDS = (
    "call", "put", "capped", "reset_call", "ratio_call", "chooser",
    "barrier", "exchange", "real_world_call",
)


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt: float
    n_paths: int
    seed: int
    horizon_sim_multiplier: float = 4.0
    n_workers: int = 1


@dataclass(frozen=True)
class PayoffCell:
    kind: str
    K: float = 1.0
    T: float = 1.0
    S: float = 0.0
    dates: tuple = ()
    variant: str = ""
    level: float = 0.0
    style: str = "European"
    cap: float = 0.0

    def label(self) -> str:
        bits = [self.kind, f"K={self.K:g}", f"T={self.T:g}"]
        if self.kind in ("ratio_call", "chooser"):
            bits.append(f"S={self.S:g}")
        if self.kind == "barrier":
            bits.append(f"{self.variant}@{self.level:g}")
        if self.kind == "exchange":
            bits.append(self.style)
        return ",".join(bits)


@dataclass(frozen=True)
class OutputConfig:
    csv: str = "prices.csv"
    json: str = "manifest.json"
    dump_paths: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model: models.ModelSpec
    payoffs: tuple
    sim: SimConfig
    methods: tuple
    outputs: OutputConfig
    config_hash: str = ""
    raw: dict = field(default_factory=dict)


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in [{where}]")
    return table[key]


def build_model(table: dict) -> models.ModelSpec:
    preset = _require(table, "preset", "model")
    x0 = float(table.get("x0", 1.0))
    if preset == "inverse_bes3":
        return models.inverse_bes3(x0)
    if preset == "cev":
        return models.cev(float(_require(table, "alpha", "model")), x0)
    if preset == "exp_lm":
        scale = float(table.get("b_scale", 1.0))
        return models.exp_lm(
            b=lambda y, _s=scale: _s * y,
            mu=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
            sigma_y=lambda y: np.ones_like(np.asarray(y, dtype=float)),
            y0=float(table.get("y0", 1.0)),
            x0=x0,
            label=f"exp_lm(b_scale={scale:g})",
        )
    if preset == "two_asset":
        return models.two_asset(
            float(_require(table, "alpha_x", "model")),
            float(_require(table, "alpha_y", "model")),
            float(table.get("rho", 0.0)),
            x0=x0,
            y0=float(table.get("y0", 1.0)),
        )
    if preset == "two_asset_unit_y":
        base = models.cev(float(table.get("alpha", 2.0)), x0)
        return models.two_asset_unit_y(base)
    raise ConfigError(f"unknown model preset {preset!r}")


def build_payoff(cell: PayoffCell):
    """PayoffCell -> PayoffSpec for the single-asset estimator kinds."""
    if cell.kind == "call":
        return payoff_mod.call(cell.K, cell.T)
    if cell.kind == "put":
        return payoff_mod.put(cell.K, cell.T)
    if cell.kind == "capped":
        return payoff_mod.capped_call(cell.cap if cell.cap > 0 else cell.K, cell.T)
    if cell.kind == "reset_call":
        return payoff_mod.reset_call(cell.K, cell.dates, cell.T)
    if cell.kind == "ratio_call":
        return payoff_mod.ratio_call(cell.K, cell.S, cell.T)
    if cell.kind == "chooser":
        return payoff_mod.chooser(cell.K, cell.S, cell.T)
    if cell.kind == "barrier":
        return payoff_mod.call(cell.K, cell.T)
    raise ConfigError(f"{cell.kind!r} has no single-asset payoff spec")


def parse_config(path: str) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    try:
        doc = tomllib.loads(raw_bytes.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if "model" not in doc:
        raise ConfigError(f"{path}: missing [model] table")
    model = build_model(doc["model"])

    sim_t = doc.get("sim")
    if sim_t is None:
        raise ConfigError(f"{path}: missing [sim] table")
    if "seed" not in sim_t:
        raise ConfigError(f"{path}: [sim] must pin a seed (no wall-clock seeding)")
    sim = SimConfig(
        horizon=float(_require(sim_t, "horizon", "sim")),
        dt=float(_require(sim_t, "dt", "sim")),
        n_paths=int(_require(sim_t, "n_paths", "sim")),
        seed=int(sim_t["seed"]),
        horizon_sim_multiplier=float(sim_t.get("horizon_sim_multiplier", 4.0)),
        n_workers=int(sim_t.get("n_workers", 1)),
    )
    if sim.dt <= 0 or sim.horizon < 0 or sim.n_paths < 1:
        raise ConfigError(f"{path}: [sim] values out of range")
    n_steps = round(sim.horizon / sim.dt)
    if abs(n_steps * sim.dt - sim.horizon) > 1e-9 * max(1.0, sim.horizon):
        raise ConfigError(f"{path}: [sim] dt must divide horizon")

    cells = []
    for i, p in enumerate(doc.get("payoffs", [])):
        kind = p.get("kind")
        if kind not in PAYOFF_KINDS:
            raise ConfigError(f"{path}: [[payoffs]] #{i + 1}: unknown kind {kind!r}")
        cell = PayoffCell(
            kind=kind,
            K=float(p.get("K", 1.0)),
            T=float(p.get("T", sim.horizon)),
            S=float(p.get("S", 0.0)),
            dates=tuple(float(t) for t in p.get("dates", ())),
            variant=str(p.get("variant", "")),
            level=float(p.get("level", 0.0)),
            style=str(p.get("style", "European")),
            cap=float(p.get("cap", 0.0)),
        )
        if cell.T > sim.horizon + 1e-12:
            raise ConfigError(f"{path}: [[payoffs]] #{i + 1}: maturity beyond sim horizon")
        if kind == "barrier" and cell.variant not in ("DI", "DO", "UI", "UO"):
            raise ConfigError(f"{path}: [[payoffs]] #{i + 1}: barrier variant must be DI/DO/UI/UO")
        cells.append(cell)

    run_t = doc.get("run", {})
    methods = tuple(run_t.get("methods", ["direct_p", "survival_q"]))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"{path}: [run] unknown method {m!r}")

    out_t = doc.get("outputs", {})
    outputs = OutputConfig(
        csv=str(out_t.get("csv", "prices.csv")),
        json=str(out_t.get("json", "manifest.json")),
        dump_paths=bool(out_t.get("dump_paths", False)),
    )
    return ExperimentConfig(
        model=model,
        payoffs=tuple(cells),
        sim=sim,
        methods=methods,
        outputs=outputs,
        config_hash=hashlib.sha256(raw_bytes).hexdigest(),
        raw=doc,
    )
