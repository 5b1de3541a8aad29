"""Catalog of strictly positive local-martingale models and their dual dynamics.

A model describes the price process ``X`` under the pricing measure P.  Every
diffusion model here also carries enough structure to derive the dynamics of
the reciprocal ``V = 1/X`` under the associated measure Q, where ``V`` is a
true martingale that may be absorbed at zero (the absorption time of ``V`` is
the explosion time of ``X`` under Q).

Strictness of a natural-scale diffusion ``dX = sigma(X) dW`` is decided by the
two integrals of ``x / sigma(x)^2`` near zero and near infinity: divergence at
the origin gives strict positivity, convergence at infinity makes ``X`` a
strict local martingale (its mean decays).  ``classify_strictness`` settles
both by adaptive quadrature plus a power-law fit of ``sigma`` in the relevant
tail, because quadrature alone cannot certify divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import ConfigError, IndeterminateStrictnessError, InputError, NumericsError

__all__ = [
    "ModelSpec",
    "DualDynamics",
    "StrictnessReport",
    "ScaleFunction",
    "inverse_bes3",
    "cev",
    "natural_scale",
    "exp_lm",
    "scaled_transient",
    "two_asset",
    "time_changed",
    "classify_strictness",
    "dual_dynamics",
    "time_change_strictify",
]

KINDS = (
    "InverseBes3",
    "NaturalScaleDiffusion",
    "ExponentialLM",
    "ScaledTransientDiffusion",
    "TimeChangedMartingale",
    "TwoAssetCorrelated",
)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a strictly positive local martingale (or pair).

    Function handles must be pure and vectorized over numpy arrays; model
    objects are immutable and safe to share across simulation workers.
    """

    kind: str
    x0: float = 1.0
    sigma: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # ExponentialLM: dX = X b(Y) dW,  dY = mu(Y) dt + sigma_y(Y) dW  (same driver)
    b: Optional[Callable[[np.ndarray], np.ndarray]] = None
    mu: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sigma_y: Optional[Callable[[np.ndarray], np.ndarray]] = None
    y0: float = 1.0
    # ScaledTransientDiffusion: dD = drift_b(D) dt + diff_sigma(D) dW, X = -s(D)
    drift_b: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diff_sigma: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # TwoAssetCorrelated: dX = sigma(X) dW, dY = gamma(Y) dB, d<B,W> = rho dt
    gamma: Optional[Callable[[np.ndarray], np.ndarray]] = None
    rho: float = 0.0
    # TimeChangedMartingale: inner martingale simulated on [0, inner_horizon]
    inner: Optional["ModelSpec"] = None
    inner_horizon: float = 0.0
    label: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if not (self.x0 > 0.0):
            raise ConfigError(f"x0 must be positive, got {self.x0}")
        if self.kind == "TwoAssetCorrelated" and not (-1.0 < self.rho < 1.0):
            raise ConfigError(f"two-asset correlation must lie in (-1, 1), got {self.rho}")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    def with_x0(self, x0: float) -> "ModelSpec":
        return replace(self, x0=float(x0))


@dataclass(frozen=True)
class DualDynamics:
    """Dynamics of the reciprocal process under the associated measure Q."""

    sigma_bar: Optional[Callable[[np.ndarray], np.ndarray]] = None
    q_drift_y: Optional[Callable[[np.ndarray], np.ndarray]] = None
    scale: Optional["ScaleFunction"] = None


@dataclass(frozen=True)
class StrictnessReport:
    positive: bool
    strict: bool
    integral_lower: float
    integral_upper: float
    exponent_origin: float
    exponent_tail: float


# ---------------------------------------------------------------------------
# presets


def inverse_bes3(x0: float = 1.0) -> ModelSpec:
    """Reciprocal of a 3-dimensional Bessel process; the canonical strict local martingale."""
    return ModelSpec(
        kind="InverseBes3",
        x0=x0,
        sigma=lambda x: x * x,
        label="inverse_bes3",
        params={"alpha": 2.0},
    )


def cev(alpha: float, x0: float = 1.0) -> ModelSpec:
    """Natural-scale power diffusion dX = X^alpha dW (strict local martingale iff alpha > 1)."""
    a = float(alpha)
    return ModelSpec(
        kind="NaturalScaleDiffusion",
        x0=x0,
        sigma=lambda x, _a=a: np.power(x, _a),
        label=f"cev({a:g})",
        params={"alpha": a},
    )


def natural_scale(sigma: Callable[[np.ndarray], np.ndarray], x0: float = 1.0, label: str = "natural_scale") -> ModelSpec:
    return ModelSpec(kind="NaturalScaleDiffusion", x0=x0, sigma=sigma, label=label)


def exp_lm(
    b: Callable[[np.ndarray], np.ndarray],
    mu: Callable[[np.ndarray], np.ndarray],
    sigma_y: Callable[[np.ndarray], np.ndarray],
    y0: float = 0.0,
    x0: float = 1.0,
    label: str = "exp_lm",
) -> ModelSpec:
    """Exponential local martingale dX = X b(Y) dW driven by a factor diffusion Y."""
    return ModelSpec(kind="ExponentialLM", x0=x0, b=b, mu=mu, sigma_y=sigma_y, y0=y0, label=label)


def scaled_transient(
    drift_b: Callable[[np.ndarray], np.ndarray],
    diff_sigma: Callable[[np.ndarray], np.ndarray],
    x0: float = 1.0,
    label: str = "scaled_transient",
) -> ModelSpec:
    """Transient diffusion D on (0, inf); the traded process is -s(D) in natural scale."""
    return ModelSpec(kind="ScaledTransientDiffusion", x0=x0, drift_b=drift_b, diff_sigma=diff_sigma, label=label)


def two_asset(alpha_x: float, alpha_y: float, rho: float, x0: float = 1.0, y0: float = 1.0) -> ModelSpec:
    """Correlated pair of natural-scale power diffusions (X, Y)."""
    ax, ay = float(alpha_x), float(alpha_y)
    return ModelSpec(
        kind="TwoAssetCorrelated",
        x0=x0,
        y0=y0,
        sigma=lambda x, _a=ax: np.power(x, _a),
        gamma=lambda y, _a=ay: np.power(y, _a),
        rho=float(rho),
        label=f"two_asset({ax:g};{ay:g};{rho:g})",
        params={"alpha_x": ax, "alpha_y": ay},
    )


def two_asset_unit_y(x_model: ModelSpec) -> ModelSpec:
    """Pair (X, Y) with Y identically one: gamma == 0 degenerates the second asset."""
    if x_model.kind not in ("InverseBes3", "NaturalScaleDiffusion"):
        raise ConfigError("two_asset_unit_y needs a natural-scale first asset")
    return ModelSpec(
        kind="TwoAssetCorrelated",
        x0=x_model.x0,
        y0=1.0,
        sigma=x_model.sigma,
        gamma=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        rho=0.0,
        label=f"{x_model.label}+unit_y",
        params=dict(x_model.params),
    )


def time_changed(inner: ModelSpec, inner_horizon: float = 60.0) -> ModelSpec:
    """Deterministic time change of a non-uniformly-integrable martingale into a strict one."""
    return ModelSpec(
        kind="TimeChangedMartingale",
        x0=1.0,
        inner=inner,
        inner_horizon=float(inner_horizon),
        label=f"time_changed[{inner.label}]",
    )


# ---------------------------------------------------------------------------
# strictness classification


def _power_fit(sigma: Callable, lo: float, hi: float, n: int = 41) -> tuple[float, float, float]:
    """Fit sigma(x) ~ c * x^p on [lo, hi] (log-log least squares).

    Returns (p, c, max_log_residual).
    """
    xs = np.geomspace(lo, hi, n)
    try:
        vals = np.asarray(sigma(xs), dtype=float)
    except Exception as exc:  # pragma: no cover - exercised via InputError tests
        raise InputError(f"diffusion coefficient not evaluable on [{lo:g}, {hi:g}]: {exc}") from exc
    if vals.shape != xs.shape or not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
        raise InputError(
            f"diffusion coefficient must be finite and positive on [{lo:g}, {hi:g}]"
        )
    lx, lv = np.log(xs), np.log(vals)
    p, logc = np.polyfit(lx, lv, 1)
    resid = float(np.max(np.abs(lv - (p * lx + logc))))
    return float(p), float(math.exp(logc)), resid


_EXP_TOL = 1e-8  # exponent equality tolerance at the convergence boundary
_FIT_TOL = 1e-3  # max log-residual before the tail is declared non-power-law


def classify_strictness(model: ModelSpec, quad_tol: float = 1e-8) -> StrictnessReport:
    """Classify positivity and strictness of a natural-scale diffusion.

    The origin integral of ``x / sigma(x)^2`` must diverge for strict
    positivity; the tail integral must converge for the process to be a strict
    local martingale.  Near both endpoints the integrand is replaced by its
    fitted power law, which decides divergence and supplies the analytic tail
    of convergent integrals.
    """
    if model.kind not in ("NaturalScaleDiffusion", "InverseBes3"):
        raise ConfigError("classify_strictness requires a natural-scale diffusion")
    sigma = model.sigma

    p0, c0, r0 = _power_fit(sigma, 1e-9, 1e-7)
    p1, c1, r1 = _power_fit(sigma, 1e7, 1e9)
    if max(r0, r1) > _FIT_TOL:
        raise IndeterminateStrictnessError(
            f"sigma is not asymptotically a power law (log residuals {r0:.2e}, {r1:.2e}); "
            "cannot certify convergence or divergence"
        )

    def integrand(x):
        s = float(np.asarray(sigma(np.asarray([x], dtype=float)), dtype=float)[0])
        return x / (s * s)

    def quad_decades(lo, hi):
        """Quadrature over [lo, hi] split per decade (power decay spans many scales)."""
        edges = np.geomspace(lo, hi, max(2, int(round(math.log10(hi / lo))) + 1))
        total = 0.0
        err_total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, err = integrate.quad(integrand, a, b, epsabs=quad_tol, epsrel=quad_tol, limit=200)
            total += val
            err_total += err
        if err_total > 100.0 * max(quad_tol, 1e-13) * max(1.0, abs(total)):
            raise NumericsError(
                f"integral of x/sigma^2 did not reach tolerance on [{lo:g}, {hi:g}]: err={err_total:g}"
            )
        return total

    # origin: integrand ~ x^(1 - 2 p0) / c0^2, divergent iff p0 >= 1
    positive = p0 >= 1.0 - _EXP_TOL
    if positive:
        integral_lower = math.inf
    else:
        eps = 1e-7
        tail = eps ** (2.0 - 2.0 * p0) / (c0 * c0 * (2.0 - 2.0 * p0))
        integral_lower = quad_decades(eps, 1.0) + tail

    # tail: integrand ~ x^(1 - 2 p1) / c1^2, convergent iff p1 > 1
    strict = p1 > 1.0 + _EXP_TOL
    if not strict:
        integral_upper = math.inf
    else:
        big = 1e7
        tail = big ** (2.0 - 2.0 * p1) / (c1 * c1 * (2.0 * p1 - 2.0))
        integral_upper = quad_decades(1.0, big) + tail

    return StrictnessReport(
        positive=bool(positive),
        strict=bool(strict),
        integral_lower=float(integral_lower),
        integral_upper=float(integral_upper),
        exponent_origin=p0,
        exponent_tail=p1,
    )


# ---------------------------------------------------------------------------
# scale function of a transient diffusion


class ScaleFunction:
    """Scale function of dD = b(D) dt + sigma(D) dW, normalized to s(1) = -1, s(inf) = 0.

    Built from the raw scale integral with inner constant 1 and then affinely
    renormalized.  Evaluation interpolates a dense log-spaced table; the table
    construction fails loudly when the integrand is not finite or the scale
    does not converge at infinity (non-transient case).
    """

    def __init__(self, drift_b, diff_sigma, span=(1e-8, 1e8), n_nodes=4001):
        xs = np.geomspace(span[0], span[1], n_nodes)
        sig = np.asarray(diff_sigma(xs), dtype=float)
        drf = np.asarray(drift_b(xs), dtype=float)
        ratio = 2.0 * drf / (sig * sig)
        if not np.all(np.isfinite(ratio)):
            k = int(np.argmax(~np.isfinite(ratio)))
            raise NumericsError(
                f"scale integrand 2 b / sigma^2 is not finite near x={xs[k]:.6g}"
            )
        # inner integral I(u) = int_1^u 2 b / sigma^2 dv, cumulative from the node at 1
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ratio[1:] + ratio[:-1]) * np.diff(xs))])
        inner = cum - np.interp(1.0, xs, cum)
        sprime = np.exp(-inner)
        if not np.all(np.isfinite(sprime)):
            k = int(np.argmax(~np.isfinite(sprime)))
            raise NumericsError(f"scale density overflowed near x={xs[k]:.6g}")
        raw = np.concatenate([[0.0], np.cumsum(0.5 * (sprime[1:] + sprime[:-1]) * np.diff(xs))])
        raw = raw - np.interp(1.0, xs, raw)

        # analytic tail of the raw scale from the outer-decade power fit of s'
        mask = xs >= span[1] / 100.0
        lp, lc = np.polyfit(np.log(xs[mask]), np.log(sprime[mask]), 1)
        if lp >= -1.0 - 1e-8:
            raise NumericsError(
                "scale function does not converge at infinity (diffusion not transient to +inf)"
            )
        tail = math.exp(lc) * span[1] ** (lp + 1.0) / (-(lp + 1.0))
        limit = float(raw[-1] + tail)

        self._xs = xs
        self._raw = raw
        self._sprime = sprime
        self._limit = limit

    def __call__(self, x):
        raw = np.interp(np.asarray(x, dtype=float), self._xs, self._raw)
        return (raw - self._limit) / self._limit

    def prime(self, x):
        sp = np.interp(np.asarray(x, dtype=float), self._xs, self._sprime)
        return sp / self._limit

    @property
    def limit_raw(self) -> float:
        return self._limit


def dual_dynamics(model: ModelSpec) -> DualDynamics:
    """Dynamics package of 1/X (and the factor process) under the associated measure."""
    if model.kind in ("InverseBes3", "NaturalScaleDiffusion"):
        sigma = model.sigma

        def sigma_bar(y, _s=sigma):
            y = np.asarray(y, dtype=float)
            return -(y * y) * _s(1.0 / y)

        return DualDynamics(sigma_bar=sigma_bar)
    if model.kind == "ExponentialLM":

        def q_drift_y(y, _m=model.mu, _s=model.sigma_y, _b=model.b):
            y = np.asarray(y, dtype=float)
            return _m(y) + _s(y) * _b(y)

        return DualDynamics(q_drift_y=q_drift_y)
    if model.kind == "ScaledTransientDiffusion":
        scale = ScaleFunction(model.drift_b, model.diff_sigma)

        def q_drift_d(d, _sc=scale, _b=model.drift_b, _sig=model.diff_sigma):
            # drift of the underlying diffusion D under Q: b + sigma^2 s'/s
            d = np.asarray(d, dtype=float)
            s = _sc(d)
            return _b(d) + _sig(d) ** 2 * _sc.prime(d) / s

        return DualDynamics(scale=scale, q_drift_y=q_drift_d)
    raise ConfigError(f"model kind {model.kind} has no dual dynamics")


# ---------------------------------------------------------------------------
# time change


def time_change_strictify(y_paths, out_times=None):
    """Turn paths of a non-UI martingale Y into X_t = (1 + Y_{t/(1-t)}) / 2.

    ``y_paths`` must be a P-ensemble whose stored grid covers the image of the
    requested output times under t -> t/(1-t); times at or beyond 1 read the
    terminal simulated value of Y, the finite-horizon proxy for its limit.
    Requested times are snapped to the nearest stored time of Y.
    """
    from .engine import PathEnsemble, EventClocks  # local import to avoid a cycle

    if y_paths.measure != "P":
        raise ConfigError("time change expects a P-ensemble of the inner martingale")
    grid = np.asarray(y_paths.grid, dtype=float)
    horizon = float(grid[-1])
    if out_times is None:
        frac = horizon / (1.0 + horizon)
        out_times = np.concatenate([np.linspace(0.0, min(frac, 0.96), 25), [1.0, 1.05]])
    out_times = np.asarray(out_times, dtype=float)

    cols = np.empty((y_paths.n_paths, out_times.size))
    for j, t in enumerate(out_times):
        if t >= 1.0:
            y = y_paths.values[:, -1]
        else:
            u = t / (1.0 - t)
            if u > horizon * (1.0 + 1e-9):
                raise ConfigError(
                    f"time {t:g} maps to {u:g}, beyond the simulated horizon {horizon:g}"
                )
            k = int(np.argmin(np.abs(grid - u)))
            y = y_paths.values[:, k]
        cols[:, j] = 0.5 * (1.0 + y)

    clocks = EventClocks.empty(y_paths.n_paths, measure="P")
    clocks.running_min = np.minimum.accumulate(cols, axis=1)
    clocks.running_max = np.maximum.accumulate(cols, axis=1)
    return PathEnsemble(
        measure="P",
        grid=out_times,
        values=cols,
        clocks=clocks,
        seed=y_paths.seed,
        substream_ids=list(y_paths.substream_ids),
        dt=y_paths.dt,
        model_label=f"time_changed[{y_paths.model_label}]",
        x0=0.5 * (1.0 + y_paths.x0),
    )
