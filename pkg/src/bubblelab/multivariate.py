"""Joint change of measure for pairs, and the Kelvin inversion of conformal paths.

For two correlated strictly positive local martingales with absolutely
continuous brackets, a single stochastic exponential reweights P so that both
reciprocals become true martingales at once.  The integrands involve the
inverse of the instantaneous covariance matrix, so the construction requires
f g - h^2 > 0 along the path; degenerate states are rejected, not
regularized.  All verifications are performed on stopped versions (stop when
the exponential exceeds a cap), matching the consistent-family construction.

The Kelvin map x -> x/|x|^2 sends a conformal local martingale in dimension
d >= 3 to a process that becomes a true martingale after reweighting by
|X|^(2-d) at the stopped time; the weight is a bounded harmonic functional on
paths kept away from the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError, SingularityError, UnsupportedModelError
from .models import ModelSpec
from .stats import block_mean_se

__all__ = [
    "JointExponentialEnsemble",
    "simulate_joint_exponential",
    "ConformalEnsemble",
    "simulate_conformal_bm",
    "KelvinEnsemble",
    "kelvin_inversion",
]

_DEGENERACY_FLOOR = 1e-14
FLOOR = 1e-12


@dataclass
class JointExponentialEnsemble:
    grid: np.ndarray
    exp_stopped: np.ndarray   # E(M) at t and tau_n^E, n_paths x n_times
    x_stopped: np.ndarray
    y_stopped: np.ndarray
    tau_e: np.ndarray         # stopping time per path (cap crossing or time cap)
    cap: float
    seed: int
    n_degenerate_stops: int = 0

    @property
    def n_paths(self) -> int:
        return self.exp_stopped.shape[0]

    def reweighted_mean(self, series: np.ndarray, col: int) -> tuple[float, float]:
        """Mean and SE of E(M)-weighted series values at one stored column."""
        return block_mean_se(self.exp_stopped[:, col] * series[:, col])

    def report(self, model_label: str = "") -> dict:
        """JSON-able normalization / constancy summary per stored time."""
        rows = []
        for j, t in enumerate(self.grid):
            e_mean, e_se = block_mean_se(self.exp_stopped[:, j])
            wx, wx_se = self.reweighted_mean(1.0 / self.x_stopped, j)
            wy, wy_se = self.reweighted_mean(1.0 / self.y_stopped, j)
            rows.append({
                "model": model_label, "cap": self.cap, "t": float(t),
                "exp_mean": e_mean, "exp_se": e_se,
                "reweighted_inv_x": wx, "reweighted_inv_x_se": wx_se,
                "reweighted_inv_y": wy, "reweighted_inv_y_se": wy_se,
                "normalization_ok": bool(abs(e_mean - 1.0) <= 3.0 * e_se),
                "constancy_ok": bool(abs(wx - 1.0) <= 3.0 * wx_se and abs(wy - 1.0) <= 3.0 * wy_se),
            })
        return {"checks": rows, "n_paths": int(self.n_paths), "seed": int(self.seed),
                "n_degenerate_stops": int(self.n_degenerate_stops)}


def simulate_joint_exponential(
    model: ModelSpec,
    horizon: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    cap: float = 10.0,
    q_max: float = 0.01,
    form: str = "doleans",
    obs_times=None,
    n_workers: int = 1,
) -> JointExponentialEnsemble:
    """Simulate (X, Y) under P with the joint reweighting exponential, stopped at ``cap``.

    M is accumulated from the Euler increments of X and Y and its bracket from
    the same increments, so the reweighting factor is exactly the exponential
    of the discrete M.  ``form`` picks the discrete exponential: "doleans"
    compounds the increments as prod(1 + dM), which is mean-one for every
    stopping rule by construction; "ito" uses exp(M - <M>/2), which agrees in
    the continuum limit but carries an O(dt) normalization drift on paths with
    large bracket growth.
    """
    if form not in ("doleans", "ito"):
        raise ConfigError(f"unknown exponential form {form!r}")
    if model.kind != "TwoAssetCorrelated":
        raise ConfigError("joint exponential needs a TwoAssetCorrelated model")
    if cap < 1.0:
        raise ConfigError("cap must be at least 1")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigError(f"horizon {horizon} is not a multiple of dt {dt}")
    if obs_times is None:
        obs_times = (horizon,)
    obs = np.asarray(obs_times, dtype=float)
    obs_idx = np.round(obs / dt).astype(int)
    if np.any(np.abs(obs_idx * dt - obs) > 1e-9):
        raise ConfigError("observation times must lie on the simulation grid")
    obs_map = {int(k): j for j, k in enumerate(obs_idx)}

    rho = model.rho
    rho_c = math.sqrt(max(0.0, 1.0 - rho * rho))
    sqrt_dt = math.sqrt(dt)

    e_out = np.empty((n_paths, obs.size))
    x_out = np.empty((n_paths, obs.size))
    y_out = np.empty((n_paths, obs.size))
    tau_out = np.empty(n_paths)

    def drivers(x, y):
        sig = model.sigma(np.maximum(x, FLOOR))
        gam = model.gamma(np.maximum(y, FLOOR))
        f = sig * sig
        g = gam * gam
        h = rho * sig * gam
        det = f * g - h * h
        return sig, gam, f, g, h, det


    def runner(blk, lo, hi):
        n = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        x = np.full(n, model.x0)
        y = np.full(n, model.y0)
        m_acc = np.zeros(n)
        br_acc = np.zeros(n)
        e_val = np.ones(n)
        active = np.ones(n, dtype=bool)
        tau = np.full(n, min(horizon, cap))
        n_degenerate = 0

        sig, gam, f, g, h, det = drivers(x, y)
        if det[0] <= _DEGENERACY_FLOOR:
            raise SingularityError(
                f"covariance degenerate at the initial state (x={model.x0:g}, y={model.y0:g}): "
                f"f*g - h^2 = {det[0]:.3e}"
            )

        if 0 in obs_map:
            j = obs_map[0]
            e_out[lo:hi, j] = e_val
            x_out[lo:hi, j] = x
            y_out[lo:hi, j] = y

        for i in range(n_steps):
            t_new = (i + 1) * dt
            zw = gen.standard_normal(n)
            ze = gen.standard_normal(n)
            zb = rho * zw + rho_c * ze

            sig, gam, f, g, h, det = drivers(x, y)
            # paths whose discretized state degenerates are stopped where they
            # stand (an admissible stopping rule); only the starting state is a
            # hard error, and the count is surfaced for diagnostics
            degen = active & (det <= _DEGENERACY_FLOOR)
            if degen.any():
                n_degenerate += int(degen.sum())
                tau = np.where(degen, i * dt, tau)
                active &= ~degen
            det = np.maximum(det, _DEGENERACY_FLOOR)

            a_x = (f * y - h * x) * g / (y * x * det)
            a_y = (g * x - h * y) * f / (y * x * det)
            # scheme guard: freeze the path while the exponential can still
            # track its own bracket.  The guard depends only on the current
            # state, so it is one more admissible localization and leaves the
            # stopped-martingale identities intact.
            axs = a_x * sig
            ays = a_y * gam
            q_step = (axs * axs + ays * ays + 2.0 * rho * axs * ays) * dt
            rough = active & (q_step > q_max)
            if rough.any():
                tau = np.where(rough, i * dt, tau)
                active &= ~rough

            dx = sig * sqrt_dt * zw
            dy = gam * sqrt_dt * zb
            dm = a_x * dx + a_y * dy

            upd = active
            x = np.where(upd, np.maximum(x + dx, FLOOR), x)
            y = np.where(upd, np.maximum(y + dy, FLOOR), y)
            m_acc = np.where(upd, m_acc + dm, m_acc)
            br_acc = np.where(upd, br_acc + dm * dm, br_acc)
            if form == "doleans":
                e_val = np.where(upd, e_val * (1.0 + dm), e_val)
            else:
                e_val = np.where(upd, np.exp(m_acc - 0.5 * br_acc), e_val)

            crossed = active & (e_val > cap)
            tau = np.where(crossed, t_new, tau)
            active &= ~crossed
            timed_out = active & (t_new >= cap)
            active &= ~timed_out

            j = obs_map.get(i + 1)
            if j is not None:
                e_out[lo:hi, j] = e_val
                x_out[lo:hi, j] = x
                y_out[lo:hi, j] = y

        tau_out[lo:hi] = tau
        return {"n_degenerate_stops": n_degenerate}

    n_degen_total = 0
    for blk, lo, hi in rng.iter_blocks(n_paths):
        part = runner(blk, lo, hi)
        n_degen_total += part.get("n_degenerate_stops", 0)
    if n_degen_total > 0.01 * n_paths:
        raise SingularityError(
            f"{n_degen_total} of {n_paths} paths degenerated; the pair likely violates "
            "the nondegenerate-covariance hypothesis"
        )

    return JointExponentialEnsemble(
        grid=obs, exp_stopped=e_out, x_stopped=x_out, y_stopped=y_out,
        tau_e=tau_out, cap=cap, seed=seed, n_degenerate_stops=n_degen_total,
    )


# ---------------------------------------------------------------------------
# conformal paths and Kelvin inversion


@dataclass
class ConformalEnsemble:
    grid: np.ndarray
    x_stopped: np.ndarray        # n_paths x n_times x d, stopped at tau_n
    tau_n: np.ndarray
    covariation: np.ndarray      # n_paths x d x d realized bracket of Y up to the stop
    stop_level: float
    dim: int
    seed: int


def simulate_conformal_bm(
    d: int,
    horizon: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    n_level: int = 8,
    obs_times=None,
) -> ConformalEnsemble:
    """d-dimensional Brownian motion from the first unit vector, stopped near the origin.

    The stop fires at the first grid time with |X| <= 1/n_level.  Alongside the
    stopped path the realized quadratic covariation of the inverted process
    Y = X/|X|^2 is accumulated step by step, the raw material for conformality
    checks (equal diagonals, vanishing off-diagonals).
    """
    if d < 3:
        raise UnsupportedModelError("the inversion needs dimension at least 3")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigError(f"horizon {horizon} is not a multiple of dt {dt}")
    if obs_times is None:
        obs_times = (horizon,)
    obs = np.asarray(obs_times, dtype=float)
    obs_idx = np.round(obs / dt).astype(int)
    if np.any(np.abs(obs_idx * dt - obs) > 1e-9):
        raise ConfigError("observation times must lie on the simulation grid")
    obs_map = {int(k): j for j, k in enumerate(obs_idx)}
    level = 1.0 / n_level
    sqrt_dt = math.sqrt(dt)

    x_out = np.empty((n_paths, obs.size, d))
    tau_out = np.full(n_paths, math.inf)
    cov_out = np.zeros((n_paths, d, d))

    def invert(x):
        r2 = np.sum(x * x, axis=1, keepdims=True)
        return x / np.maximum(r2, 1e-300)

    def runner(blk, lo, hi):
        n = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        x = np.zeros((n, d))
        x[:, 0] = 1.0
        active = np.ones(n, dtype=bool)
        tau = np.full(n, math.inf)
        y = invert(x)
        cov = np.zeros((n, d, d))

        if 0 in obs_map:
            x_out[lo:hi, obs_map[0]] = x

        for i in range(n_steps):
            t_new = (i + 1) * dt
            z = gen.standard_normal((n, d))
            x_new = x + sqrt_dt * z
            x = np.where(active[:, None], x_new, x)
            y_new = invert(x)
            dy = np.where(active[:, None], y_new - y, 0.0)
            cov += dy[:, :, None] * dy[:, None, :]
            y = y_new

            radius = np.sqrt(np.sum(x * x, axis=1))
            stopped = active & (radius <= level)
            tau[stopped] = t_new
            active &= ~stopped

            j = obs_map.get(i + 1)
            if j is not None:
                x_out[lo:hi, j] = x

        tau_out[lo:hi] = tau
        cov_out[lo:hi] = cov
        return {}

    for blk, lo, hi in rng.iter_blocks(n_paths):
        runner(blk, lo, hi)

    return ConformalEnsemble(
        grid=obs, x_stopped=x_out, tau_n=tau_out, covariation=cov_out,
        stop_level=level, dim=d, seed=seed,
    )


@dataclass
class KelvinEnsemble:
    grid: np.ndarray
    y_stopped: np.ndarray     # n_paths x n_times x d
    weights: np.ndarray       # |X|^(2-d) at the stopped times, n_paths x n_times
    dim: int

    def reweighted_component_mean(self, col: int, comp: int) -> tuple[float, float]:
        return block_mean_se(self.weights[:, col] * self.y_stopped[:, col, comp])


def kelvin_inversion(conf: ConformalEnsemble) -> KelvinEnsemble:
    """Map stopped conformal paths through x -> x/|x|^2 with their reweighting factors."""
    if conf.dim < 3:
        raise UnsupportedModelError("the inversion needs dimension at least 3")
    r2 = np.sum(conf.x_stopped**2, axis=2)
    r = np.sqrt(np.maximum(r2, 1e-300))
    y = conf.x_stopped / np.maximum(r2, 1e-300)[:, :, None]
    w = r ** (2.0 - conf.dim)
    return KelvinEnsemble(grid=conf.grid, y_stopped=y, weights=w, dim=conf.dim)
