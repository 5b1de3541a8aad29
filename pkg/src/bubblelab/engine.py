"""Twin Monte Carlo engines.

``simulate_p`` draws the price process X under the pricing measure P, where it
is a strictly positive (possibly strict) local martingale.  ``simulate_q``
draws the reciprocal V = 1/X under the associated measure Q, where V is a true
martingale absorbed at zero; the absorption time of V is the explosion time of
X and is reported as ``tau``.  Ensemble values for Q runs store X = 1/V with
``inf`` after explosion, so both engines expose the same price scale.

Absorption uses per-step Brownian-bridge sampling by default: after a
surviving Euler step from v to v', the path is additionally killed with
probability exp(-2 v v' / (sigma^2 dt)), the exact probability that the
continuous bridge dipped below zero inside the step.  For the inverse-Bessel
dual (unit-diffusion Brownian motion) this makes the absorption law exact at
any step size; grid-only monitoring understates absorption by O(sqrt(dt)),
which is visible at desk tolerances.  The same sampling optionally refines
last-passage detection at user-requested levels.

Event clocks (hitting times, running extrema, last passages, explosion times)
are maintained at full step resolution while values are stored on a coarser
observation grid, so desk-scale runs stay small in memory.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import rng
from .errors import ConfigError, UnsupportedModelError
from .models import ModelSpec, dual_dynamics

__all__ = [
    "PathEnsemble",
    "EventClocks",
    "EventClock",
    "simulate_p",
    "simulate_q",
    "simulate_two_asset",
    "dump_paths",
]

FLOOR = 1e-12          # positivity floor for coefficient evaluation
VALUE_CAP = 1e12       # overflow guard for Euler states under P
FACTOR_CAP = 1e9       # |Y| beyond this counts as factor explosion (exp_lm under Q)
Y_RATIO_CAP = 1e6      # two-asset monitor: Y = Z/V beyond this flags a Y-explosion


# ---------------------------------------------------------------------------
# containers


@dataclass
class EventClocks:
    """Per-path event data, stored as arrays over the ensemble."""

    tau: np.ndarray                       # explosion time (inf if none / P measure)
    first_below: dict = field(default_factory=dict)   # level a -> first t with X <= a
    first_above: dict = field(default_factory=dict)   # level a -> first t with X > a
    running_min: Optional[np.ndarray] = None          # per stored grid point
    running_max: Optional[np.ndarray] = None
    rho_time: dict = field(default_factory=dict)      # level L -> last crossing time of dual/ratio
    rho_crossed: dict = field(default_factory=dict)   # level L -> bool
    frozen_dual: Optional[np.ndarray] = None          # V (or Z) at min(tau, horizon)
    measure: str = "P"

    @classmethod
    def empty(cls, n_paths: int, measure: str = "P") -> "EventClocks":
        return cls(tau=np.full(n_paths, math.inf), measure=measure)

    def tau_n(self, level: float) -> np.ndarray:
        """Capped first-exceedance time: first t with X > level, capped at t = level."""
        if level not in self.first_above:
            raise KeyError(f"level {level} was not tracked; pass it via levels_above")
        return np.minimum(self.first_above[level], level)

    def path(self, i: int) -> "EventClock":
        return EventClock(
            tau_x=float(self.tau[i]),
            first_below={a: float(v[i]) for a, v in self.first_below.items()},
            first_above={a: float(v[i]) for a, v in self.first_above.items()},
            rho={L: (float(self.rho_time[L][i]), bool(self.rho_crossed[L][i])) for L in self.rho_time},
            running_min=None if self.running_min is None else self.running_min[i].copy(),
            running_max=None if self.running_max is None else self.running_max[i].copy(),
        )


@dataclass(frozen=True)
class EventClock:
    """Single-path view of the event clocks."""

    tau_x: float
    first_below: dict
    first_above: dict
    rho: dict
    running_min: Optional[np.ndarray]
    running_max: Optional[np.ndarray]


@dataclass
class PathEnsemble:
    """A batch of simulated paths observed on a stored grid.

    ``values`` holds X on the stored grid (``inf`` after explosion under Q);
    full-resolution event information lives in ``clocks``.
    """

    measure: str
    grid: np.ndarray
    values: np.ndarray
    clocks: EventClocks
    seed: int
    substream_ids: list
    dt: float
    model_label: str = ""
    x0: float = 1.0
    stores: str = "price"  # "price": values are X; "ratio": values are Z = Y/X
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dual_values(self) -> np.ndarray:
        """1/X on the stored grid; exactly 0 after explosion."""
        with np.errstate(divide="ignore"):
            return np.where(np.isinf(self.values), 0.0, 1.0 / self.values)

    def column(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[j] - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise ConfigError(f"time {t} is not on the stored grid {self.grid}")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.column(t)]


# ---------------------------------------------------------------------------
# grid plumbing


def _build_grid(horizon: float, dt: float, obs_times) -> tuple[int, np.ndarray, np.ndarray]:
    if dt <= 0.0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if horizon < 0.0:
        raise ConfigError(f"horizon must be nonnegative, got {horizon}")
    n_steps = int(round(horizon / dt)) if horizon > 0 else 0
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigError(f"horizon {horizon} is not a multiple of dt {dt}")

    if obs_times is None:
        stride = max(1, int(math.ceil(n_steps / 200))) if n_steps else 1
        idx = np.arange(0, n_steps + 1, stride)
        if n_steps and idx[-1] != n_steps:
            idx = np.append(idx, n_steps)
    else:
        obs = np.atleast_1d(np.asarray(obs_times, dtype=float))
        idx = np.unique(np.round(obs / dt).astype(int)) if n_steps else np.array([0])
        for t in obs:
            k = int(round(t / dt))
            if k < 0 or k > n_steps or abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
                raise ConfigError(f"observation time {t} is not on the simulation grid")
    times = idx * dt
    return n_steps, idx.astype(int), times


def _run_blocks(n_paths: int, n_workers: int, runner: Callable[[int, int, int], dict]) -> dict:
    """Run one block task per path range; merge integer diagnostics in block order."""
    tasks = list(rng.iter_blocks(n_paths))
    if n_workers <= 1:
        partials = [runner(blk, a, b) for blk, a, b in tasks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            partials = list(pool.map(lambda t: runner(*t), tasks))
    merged: dict = {}
    for part in partials:
        for k, v in (part or {}).items():
            merged[k] = merged.get(k, 0) + v
    return merged


class _ClockTracker:
    """Streams hitting times / extrema / last passages during a block loop."""

    def __init__(self, n, x0, levels_below, levels_above, rho_levels, measure):
        self.first_below = {float(a): np.full(n, math.inf) for a in levels_below}
        self.first_above = {float(a): np.full(n, math.inf) for a in levels_above}
        self.rho_time = {float(L): np.zeros(n) for L in rho_levels}
        self.rho_crossed = {float(L): np.zeros(n, dtype=bool) for L in rho_levels}
        self.cur_min = np.full(n, x0, dtype=float)
        self.cur_max = np.full(n, x0, dtype=float)
        self.measure = measure
        for a, arr in self.first_below.items():
            if x0 <= a:
                arr[:] = 0.0
        for a, arr in self.first_above.items():
            if x0 > a:
                arr[:] = 0.0

    def update_x(self, x_new: np.ndarray, t_new: float, exploded: np.ndarray | None = None):
        """x_new: finite values; exploded marks paths that hit +inf at t_new."""
        for a, arr in self.first_below.items():
            hit = (x_new <= a) & np.isinf(arr)
            if exploded is not None:
                hit &= ~exploded
            arr[hit] = t_new
        for a, arr in self.first_above.items():
            hit = (x_new > a) & np.isinf(arr)
            if exploded is not None:
                hit |= exploded & np.isinf(arr)
            arr[hit] = t_new
        if exploded is None:
            np.minimum(self.cur_min, x_new, out=self.cur_min)
            np.maximum(self.cur_max, x_new, out=self.cur_max)
        else:
            live = ~exploded
            self.cur_min[live] = np.minimum(self.cur_min[live], x_new[live])
            self.cur_max[live] = np.maximum(self.cur_max[live], x_new[live])
            self.cur_max[exploded] = math.inf

    def update_rho(self, dual_prev, dual_new, step_var, t_new, active, gen_u, touch):
        """Record level crossings of the dual/ratio process over one step.

        A crossing is a sign change of (value - level) across the step; with
        ``touch`` enabled, same-side steps are additionally flagged with the
        Brownian-bridge touch probability using the draws in ``gen_u``.
        Crossings are stamped at the right endpoint of their interval, the
        same convention as absorption times, so joint events in (rho, tau)
        classify a death-step crossing consistently with tau.
        """
        for L in self.rho_time:
            a = dual_prev - L
            b = dual_new - L
            cross = active & (a * b <= 0.0)
            if touch:
                u = gen_u.random(dual_prev.size)
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    p = np.exp(-2.0 * np.maximum(a * b, 0.0) / np.maximum(step_var, 1e-300))
                cross |= active & (u < p) & (step_var > 0)
            elif gen_u is not None:
                gen_u.random(dual_prev.size)  # keep the draw count fixed
            self.rho_time[L][cross] = t_new
            self.rho_crossed[L][cross] = True


# ---------------------------------------------------------------------------
# P engine


def simulate_p(
    model: ModelSpec,
    horizon: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    obs_times=None,
    levels_below: Iterable[float] = (),
    levels_above: Iterable[float] = (),
    n_workers: int = 1,
) -> PathEnsemble:
    """Simulate X under P.

    The inverse-Bessel model uses the exact three-dimensional Gaussian
    construction (X = 1/|B|, B started at (1/x0, 0, 0)); diffusion models use
    full-truncation Euler with the coefficient evaluated at the state clamped
    to a positivity floor.  Proposals at or below zero are reflected to the
    floor and counted in ``diagnostics['n_floor_hits']``.
    """
    if model.kind == "TimeChangedMartingale":
        from .models import time_change_strictify

        inner = simulate_p(model.inner, model.inner_horizon, dt, n_paths, seed, n_workers=n_workers)
        return time_change_strictify(inner, obs_times)
    if model.kind == "TwoAssetCorrelated":
        raise ConfigError("use simulate_two_asset for paired models")

    n_steps, obs_idx, obs_t = _build_grid(horizon, dt, obs_times)
    values = np.empty((n_paths, obs_idx.size))
    clocks = EventClocks.empty(n_paths, measure="P")
    run_min = np.empty_like(values)
    run_max = np.empty_like(values)
    for a in levels_below:
        clocks.first_below[float(a)] = np.full(n_paths, math.inf)
    for a in levels_above:
        clocks.first_above[float(a)] = np.full(n_paths, math.inf)
    sqrt_dt = math.sqrt(dt)
    obs_set = {int(k): j for j, k in enumerate(obs_idx)}

    exact_bes3 = model.kind == "InverseBes3" or (
        model.kind == "NaturalScaleDiffusion" and model.params.get("alpha") == 2.0
    )

    def runner(blk, lo, hi):
        n = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        trk = _ClockTracker(n, model.x0, levels_below, levels_above, (), "P")

        if exact_bes3:
            b = np.zeros((n, 3))
            b[:, 0] = 1.0 / model.x0
            x = np.full(n, model.x0)
        elif model.kind == "NaturalScaleDiffusion":
            x = np.full(n, model.x0)
        elif model.kind == "ExponentialLM":
            x = np.full(n, model.x0)
            y = np.full(n, model.y0)
        elif model.kind == "ScaledTransientDiffusion":
            scale = dual_dynamics(model).scale
            d = np.full(n, model.x0)  # x0 is the start of the underlying diffusion
            x = -scale(d)
        else:
            raise UnsupportedModelError(f"simulate_p does not support {model.kind}")

        if 0 in obs_set:
            values[lo:hi, obs_set[0]] = x
            run_min[lo:hi, obs_set[0]] = trk.cur_min
            run_max[lo:hi, obs_set[0]] = trk.cur_max

        floor_hits = 0
        cap_hits = 0
        for i in range(n_steps):
            if exact_bes3:
                b += sqrt_dt * gen.standard_normal((n, 3))
                r = np.sqrt(np.sum(b * b, axis=1))
                x = 1.0 / np.maximum(r, 1e-300)
            elif model.kind == "NaturalScaleDiffusion":
                z = gen.standard_normal(n)
                sig = model.sigma(np.maximum(x, FLOOR))
                prop = x + sig * sqrt_dt * z
                bad = prop <= 0.0
                floor_hits += int(bad.sum())
                prop[bad] = FLOOR
                over = prop > VALUE_CAP
                cap_hits += int(over.sum())
                prop[over] = VALUE_CAP
                x = prop
            elif model.kind == "ExponentialLM":
                z = gen.standard_normal(n)
                dw = sqrt_dt * z
                prop = x + np.maximum(x, FLOOR) * model.b(y) * dw
                bad = prop <= 0.0
                floor_hits += int(bad.sum())
                prop[bad] = FLOOR
                x = np.minimum(prop, VALUE_CAP)
                y = y + model.mu(y) * dt + model.sigma_y(y) * dw
            else:  # ScaledTransientDiffusion
                z = gen.standard_normal(n)
                dh = np.maximum(d, FLOOR)
                prop = d + model.drift_b(dh) * dt + model.diff_sigma(dh) * sqrt_dt * z
                bad = prop <= 0.0
                floor_hits += int(bad.sum())
                prop[bad] = FLOOR
                d = prop
                x = -scale(d)

            trk.update_x(x, (i + 1) * dt)
            j = obs_set.get(i + 1)
            if j is not None:
                values[lo:hi, j] = x
                run_min[lo:hi, j] = trk.cur_min
                run_max[lo:hi, j] = trk.cur_max

        for a in trk.first_below:
            clocks.first_below[a][lo:hi] = trk.first_below[a]
        for a in trk.first_above:
            clocks.first_above[a][lo:hi] = trk.first_above[a]
        return {"n_floor_hits": floor_hits, "n_value_cap": cap_hits}

    diag = _run_blocks(n_paths, n_workers, runner)
    clocks.running_min = run_min
    clocks.running_max = run_max
    return PathEnsemble(
        measure="P",
        grid=obs_t,
        values=values,
        clocks=clocks,
        seed=seed,
        substream_ids=rng.substream_ids(seed, n_paths),
        dt=dt,
        model_label=model.label,
        x0=model.x0,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# Q engine (single asset)


def simulate_q(
    model: ModelSpec,
    horizon: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    obs_times=None,
    levels_below: Iterable[float] = (),
    levels_above: Iterable[float] = (),
    rho_levels: Iterable[float] = (),
    bridge: bool = True,
    touch_sampling: bool = True,
    n_workers: int = 1,
) -> PathEnsemble:
    """Simulate V = 1/X under Q with absorption at zero.

    Returned values store X = 1/V (``inf`` after explosion).  ``rho_levels``
    are tracked on the dual scale V: the clocks record the last crossing time
    of each level up to absorption, with optional bridge touch sampling.
    """
    if model.kind == "TwoAssetCorrelated":
        raise ConfigError("use simulate_two_asset for paired models")
    if model.kind == "TimeChangedMartingale":
        raise UnsupportedModelError("time-changed martingales carry no dual dynamics")

    dual = dual_dynamics(model)
    n_steps, obs_idx, obs_t = _build_grid(horizon, dt, obs_times)
    values = np.empty((n_paths, obs_idx.size))
    clocks = EventClocks.empty(n_paths, measure="Q")
    run_min = np.empty_like(values)
    run_max = np.empty_like(values)
    tau_all = clocks.tau
    frozen = np.empty(n_paths)
    rho_levels = tuple(float(L) for L in rho_levels)
    for L in rho_levels:
        clocks.rho_time[L] = np.zeros(n_paths)
        clocks.rho_crossed[L] = np.zeros(n_paths, dtype=bool)
    for a in levels_below:
        clocks.first_below[float(a)] = np.full(n_paths, math.inf)
    for a in levels_above:
        clocks.first_above[float(a)] = np.full(n_paths, math.inf)
    sqrt_dt = math.sqrt(dt)
    obs_set = {int(k): j for j, k in enumerate(obs_idx)}

    def x_of_v(v):
        with np.errstate(divide="ignore"):
            return np.where(v > 0.0, 1.0 / np.maximum(v, 1e-300), math.inf)

    def runner(blk, lo, hi):
        n = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        gen_u = rng.substream(seed, blk, rng.UNIFORM_STREAM)
        trk = _ClockTracker(n, model.x0, levels_below, levels_above, rho_levels, "Q")

        if model.kind == "ScaledTransientDiffusion":
            scale = dual.scale
            qdrift = dual.q_drift_y
            d = np.full(n, model.x0)
            v = -1.0 / scale(d)
        elif model.kind == "ExponentialLM":
            v = np.full(n, 1.0 / model.x0)
            y = np.full(n, model.y0)
        else:
            v = np.full(n, 1.0 / model.x0)

        alive = np.ones(n, dtype=bool)
        tau = np.full(n, math.inf)

        if 0 in obs_set:
            values[lo:hi, obs_set[0]] = x_of_v(v)
            run_min[lo:hi, obs_set[0]] = trk.cur_min
            run_max[lo:hi, obs_set[0]] = trk.cur_max

        explosions = 0
        for i in range(n_steps):
            t_new = (i + 1) * dt
            z = gen.standard_normal(n)
            u_abs = gen_u.random(n) if bridge else None

            if model.kind == "ExponentialLM":
                dw = sqrt_dt * z
                v_new = v - model.b(y) * np.maximum(v, FLOOR) * dw
                y_new = y + dual.q_drift_y(y) * dt + model.sigma_y(y) * dw
                blown = alive & (~np.isfinite(y_new) | (np.abs(y_new) > FACTOR_CAP) | (v_new <= 0.0))
                explosions += int(blown.sum())
                hit = blown
                step_var = (model.b(y) * np.maximum(v, FLOOR)) ** 2 * dt
                v_prev = v
                v_new = np.where(hit, 0.0, v_new)
                y = np.where(alive & ~hit, y_new, y)
            elif model.kind == "ScaledTransientDiffusion":
                dh = np.maximum(d, FLOOR)
                sig = model.diff_sigma(dh)
                prop_d = d + qdrift(dh) * dt + sig * sqrt_dt * z
                hit = alive & (prop_d <= 0.0)
                if bridge:
                    with np.errstate(over="ignore", invalid="ignore"):
                        pb = np.exp(-2.0 * np.maximum(d, 0.0) * np.maximum(prop_d, 0.0) / (sig * sig * dt))
                    hit |= alive & (prop_d > 0.0) & (u_abs < pb)
                v_prev = v
                d = np.where(alive & ~hit, prop_d, d)
                v_new = np.where(hit, 0.0, -1.0 / scale(np.maximum(d, FLOOR)))
                step_var = (scale.prime(dh) * sig / scale(dh) ** 2) ** 2 * dt
            else:
                vh = np.maximum(v, FLOOR)
                sig = dual.sigma_bar(vh)
                sig2 = sig * sig
                prop = v + sig * sqrt_dt * z
                hit = alive & (prop <= 0.0)
                if bridge:
                    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                        pb = np.exp(-2.0 * np.maximum(v, 0.0) * np.maximum(prop, 0.0) / np.maximum(sig2 * dt, 1e-300))
                    hit |= alive & (prop > 0.0) & (u_abs < pb)
                v_prev = v
                v_new = np.where(hit, 0.0, prop)
                step_var = sig2 * dt

            trk.update_rho(v_prev, np.where(alive, v_new, v_prev), step_var, t_new, alive, gen_u if rho_levels else None, touch_sampling)

            newly = alive & hit
            tau[newly] = t_new
            v = np.where(alive, v_new, v)
            alive &= ~hit

            x = np.where(v > 0.0, 1.0 / np.maximum(v, 1e-300), np.nan)
            exploded = ~(v > 0.0)
            x = np.where(exploded, math.inf, x)
            trk.update_x(np.where(exploded, 0.0, x), t_new, exploded)

            j = obs_set.get(i + 1)
            if j is not None:
                values[lo:hi, j] = x
                run_min[lo:hi, j] = trk.cur_min
                run_max[lo:hi, j] = trk.cur_max

        tau_all[lo:hi] = tau
        frozen[lo:hi] = v
        for a in trk.first_below:
            clocks.first_below[a][lo:hi] = trk.first_below[a]
        for a in trk.first_above:
            clocks.first_above[a][lo:hi] = trk.first_above[a]
        for L in rho_levels:
            clocks.rho_time[L][lo:hi] = trk.rho_time[L]
            clocks.rho_crossed[L][lo:hi] = trk.rho_crossed[L]
        return {"n_factor_explosions": explosions}

    diag = _run_blocks(n_paths, n_workers, runner)
    clocks.running_min = run_min
    clocks.running_max = run_max
    clocks.frozen_dual = frozen
    return PathEnsemble(
        measure="Q",
        grid=obs_t,
        values=values,
        clocks=clocks,
        seed=seed,
        substream_ids=rng.substream_ids(seed, n_paths),
        dt=dt,
        model_label=model.label,
        x0=model.x0,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# two-asset engine


def simulate_two_asset(
    model: ModelSpec,
    measure: str,
    horizon: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    obs_times=None,
    rho_levels: Iterable[float] = (),
    levels_below: Iterable[float] = (),
    levels_above: Iterable[float] = (),
    bridge: bool = True,
    touch_sampling: bool = True,
    exact: Optional[bool] = None,
    n_workers: int = 1,
) -> tuple[PathEnsemble, PathEnsemble]:
    """Simulate the pair under P (returns (X, Y)) or under Q (returns (X, Z)).

    Under Q the pair (V, Z) = (1/X, Y/X) shares correlated drivers; V is
    absorbed at zero (explosion of X) and Z is frozen at its crossing-time
    value, reconstructed to first order from the joint step covariance.  The
    second ensemble's ``rho`` clocks track last passages of Z at the requested
    levels; its ``frozen_dual`` holds Z at min(tau, horizon).
    """
    if model.kind != "TwoAssetCorrelated":
        raise ConfigError("simulate_two_asset requires a TwoAssetCorrelated model")
    if measure not in ("P", "Q"):
        raise ConfigError(f"measure must be 'P' or 'Q', got {measure!r}")

    n_steps, obs_idx, obs_t = _build_grid(horizon, dt, obs_times)
    obs_set = {int(k): j for j, k in enumerate(obs_idx)}
    sqrt_dt = math.sqrt(dt)
    rho_levels = tuple(float(L) for L in rho_levels)
    rho = model.rho
    rho_c = math.sqrt(max(0.0, 1.0 - rho * rho))

    if exact is None:
        exact = (
            measure == "P"
            and model.rho == 0.0
            and model.params.get("alpha_x") == 2.0
            and model.params.get("alpha_y") == 2.0
        )

    vals_a = np.empty((n_paths, obs_idx.size))
    vals_b = np.empty((n_paths, obs_idx.size))
    clocks_a = EventClocks.empty(n_paths, measure=measure)
    clocks_b = EventClocks.empty(n_paths, measure=measure)
    run_min = np.empty_like(vals_a)
    run_max = np.empty_like(vals_a)
    frozen_z = np.empty(n_paths)
    for a in levels_below:
        clocks_a.first_below[float(a)] = np.full(n_paths, math.inf)
    for a in levels_above:
        clocks_a.first_above[float(a)] = np.full(n_paths, math.inf)
    for L in rho_levels:
        clocks_b.rho_time[L] = np.zeros(n_paths)
        clocks_b.rho_crossed[L] = np.zeros(n_paths, dtype=bool)

    def runner_p(blk, lo, hi):
        n = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        trk = _ClockTracker(n, model.x0, levels_below, levels_above, (), "P")
        if exact:
            bx = np.zeros((n, 3))
            bx[:, 0] = 1.0 / model.x0
            by = np.zeros((n, 3))
            by[:, 0] = 1.0 / model.y0
            x = np.full(n, model.x0)
            y = np.full(n, model.y0)
        else:
            x = np.full(n, model.x0)
            y = np.full(n, model.y0)
        if 0 in obs_set:
            vals_a[lo:hi, obs_set[0]] = x
            vals_b[lo:hi, obs_set[0]] = y
            run_min[lo:hi, obs_set[0]] = trk.cur_min
            run_max[lo:hi, obs_set[0]] = trk.cur_max
        floor_hits = 0
        for i in range(n_steps):
            if exact:
                bx += sqrt_dt * gen.standard_normal((n, 3))
                by += sqrt_dt * gen.standard_normal((n, 3))
                x = 1.0 / np.maximum(np.sqrt(np.sum(bx * bx, axis=1)), 1e-300)
                y = 1.0 / np.maximum(np.sqrt(np.sum(by * by, axis=1)), 1e-300)
            else:
                zw = gen.standard_normal(n)
                ze = gen.standard_normal(n)
                zb = rho * zw + rho_c * ze
                px = x + model.sigma(np.maximum(x, FLOOR)) * sqrt_dt * zw
                py = y + model.gamma(np.maximum(y, FLOOR)) * sqrt_dt * zb
                badx, bady = px <= 0.0, py <= 0.0
                floor_hits += int(badx.sum()) + int(bady.sum())
                px[badx] = FLOOR
                py[bady] = FLOOR
                x = np.minimum(px, VALUE_CAP)
                y = np.minimum(py, VALUE_CAP)
            trk.update_x(x, (i + 1) * dt)
            j = obs_set.get(i + 1)
            if j is not None:
                vals_a[lo:hi, j] = x
                vals_b[lo:hi, j] = y
                run_min[lo:hi, j] = trk.cur_min
                run_max[lo:hi, j] = trk.cur_max
        for a in trk.first_below:
            clocks_a.first_below[a][lo:hi] = trk.first_below[a]
        for a in trk.first_above:
            clocks_a.first_above[a][lo:hi] = trk.first_above[a]
        return {"n_floor_hits": floor_hits}

    def runner_q(blk, lo, hi):
        n = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        gen_u = rng.substream(seed, blk, rng.UNIFORM_STREAM)
        dual = dual_dynamics(
            ModelSpec(kind="NaturalScaleDiffusion", x0=model.x0, sigma=model.sigma, label=model.label)
        )
        trk = _ClockTracker(n, model.x0, levels_below, levels_above, rho_levels, "Q")
        v = np.full(n, 1.0 / model.x0)
        zr = np.full(n, model.y0 / model.x0)
        alive = np.ones(n, dtype=bool)
        tau = np.full(n, math.inf)
        y_expl = 0
        if 0 in obs_set:
            vals_a[lo:hi, obs_set[0]] = 1.0 / v
            vals_b[lo:hi, obs_set[0]] = zr
            run_min[lo:hi, obs_set[0]] = trk.cur_min
            run_max[lo:hi, obs_set[0]] = trk.cur_max
        for i in range(n_steps):
            t_new = (i + 1) * dt
            zw = gen.standard_normal(n)
            ze = gen.standard_normal(n)
            zb = rho * zw + rho_c * ze
            u_abs = gen_u.random(n) if bridge else None

            vh = np.maximum(v, FLOOR)
            sb = dual.sigma_bar(vh)
            sb2 = sb * sb
            y_val = np.where(alive, zr / vh, 0.0)
            c1 = vh * model.gamma(np.maximum(y_val, 0.0))
            c2 = y_val * sb

            prop_v = v + sb * sqrt_dt * zw
            hit = alive & (prop_v <= 0.0)
            if bridge:
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    pb = np.exp(-2.0 * np.maximum(v, 0.0) * np.maximum(prop_v, 0.0) / np.maximum(sb2 * dt, 1e-300))
                hit |= alive & (prop_v > 0.0) & (u_abs < pb)

            prop_z = np.maximum(zr + (c1 * zb + c2 * zw) * sqrt_dt, 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                beta = (c1 * rho + c2) / np.where(np.abs(sb) > 0, sb, 1.0)
            z_freeze = np.maximum(zr + beta * (0.0 - v), 0.0)

            z_prev = zr
            v_new = np.where(hit, 0.0, prop_v)
            z_new = np.where(hit, z_freeze, prop_z)

            step_var_z = (c1 * c1 + c2 * c2 + 2.0 * rho * c1 * c2) * dt
            trk.update_rho(z_prev, np.where(alive, z_new, z_prev), step_var_z, t_new, alive, gen_u if rho_levels else None, touch_sampling)

            y_expl += int((alive & (y_val > Y_RATIO_CAP)).sum())
            newly = alive & hit
            tau[newly] = t_new
            v = np.where(alive, v_new, v)
            zr = np.where(alive, z_new, zr)
            alive &= ~hit

            exploded = ~(v > 0.0)
            with np.errstate(divide="ignore"):
                x = np.where(exploded, math.inf, 1.0 / np.maximum(v, 1e-300))
            trk.update_x(np.where(exploded, 0.0, x), t_new, exploded)

            j = obs_set.get(i + 1)
            if j is not None:
                vals_a[lo:hi, j] = x
                vals_b[lo:hi, j] = zr
                run_min[lo:hi, j] = trk.cur_min
                run_max[lo:hi, j] = trk.cur_max

        clocks_a.tau[lo:hi] = tau
        clocks_b.tau[lo:hi] = tau
        frozen_z[lo:hi] = zr
        for a in trk.first_below:
            clocks_a.first_below[a][lo:hi] = trk.first_below[a]
        for a in trk.first_above:
            clocks_a.first_above[a][lo:hi] = trk.first_above[a]
        for L in rho_levels:
            clocks_b.rho_time[L][lo:hi] = trk.rho_time[L]
            clocks_b.rho_crossed[L][lo:hi] = trk.rho_crossed[L]
        return {"n_y_explosions_before_tau": y_expl}

    diag = _run_blocks(n_paths, n_workers, runner_p if measure == "P" else runner_q)

    clocks_a.running_min = run_min
    clocks_a.running_max = run_max
    ids = rng.substream_ids(seed, n_paths)
    ens_a = PathEnsemble(
        measure=measure, grid=obs_t, values=vals_a, clocks=clocks_a, seed=seed,
        substream_ids=ids, dt=dt, model_label=model.label + "/X", x0=model.x0,
        diagnostics=diag,
    )
    if measure == "Q":
        clocks_b.frozen_dual = frozen_z
    ens_b = PathEnsemble(
        measure=measure, grid=obs_t, values=vals_b, clocks=clocks_b, seed=seed,
        substream_ids=ids, dt=dt,
        model_label=model.label + ("/Y" if measure == "P" else "/Z"),
        x0=model.y0 if measure == "P" else model.y0 / model.x0,
        stores="price" if measure == "P" else "ratio",
        diagnostics=diag,
    )
    return ens_a, ens_b


# ---------------------------------------------------------------------------
# dumps


def dump_paths(ensemble: PathEnsemble, csv_path, json_path=None) -> None:
    """Write one row per (path, stored time) plus a JSON sidecar with clocks."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "value", "absorbed"])
        tau = ensemble.clocks.tau
        for i in range(ensemble.n_paths):
            for j, t in enumerate(ensemble.grid):
                val = ensemble.values[i, j]
                w.writerow([i, f"{t:.12g}", f"{val:.12g}", int(t >= tau[i])])
    if json_path is not None:
        sidecar = {
            "measure": ensemble.measure,
            "seed": ensemble.seed,
            "dt": ensemble.dt,
            "model": ensemble.model_label,
            "substream_ids": [list(s) for s in ensemble.substream_ids],
            "tau": [None if math.isinf(t) else t for t in ensemble.clocks.tau.tolist()],
            "diagnostics": ensemble.diagnostics,
        }
        with open(json_path, "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
