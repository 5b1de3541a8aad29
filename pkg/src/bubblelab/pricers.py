"""Monte Carlo pricers built on the dual engines.

Barrier identities, exchange options priced through last passage times of the
ratio process, real-world pricing when the candidate deflator is itself a
strict local martingale, and the chooser decomposition.

Exchange options evaluate events of the ratio Z = Y/X under Q: the European
value weights (1 - K Z)^+ on {rho_K <= T < tau}, the American on
{rho_K <= tau and T}, with rho_K the last passage of Z at 1/K.  Both events
reference the whole half-line; the simulation proxies them on a finite window
[0, mult*T] and reports the unresolved mass Q(tau in (T, window]) as a
diagnostic.  On never-absorbed paths the weight uses Z at the window end,
which for a unit second asset is exactly the conditional probability of the
missing tail event, so the window truncation adds no bias there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .duality import PriceEstimate
from .engine import PathEnsemble, simulate_p, simulate_q, simulate_two_asset
from .errors import ConfigError, UnsupportedModelError, UnsupportedPayoffError
from .models import ModelSpec
from .payoffs import PayoffSpec, chooser
from .stats import block_mean_se, combined_se

__all__ = [
    "ExchangeSpec",
    "BarrierIdentity",
    "RealWorldQuote",
    "barrier_price",
    "exchange_lastpassage",
    "real_world_price",
    "chooser_price",
]

BARRIER_VARIANTS = ("DI", "DO", "UI", "UO")


@dataclass(frozen=True)
class ExchangeSpec:
    K: float
    T: float
    style: str = "European"

    def __post_init__(self):
        if self.K < 0.0 or self.T < 0.0:
            raise ConfigError("exchange strike and maturity must be nonnegative")
        if self.style not in ("European", "American"):
            raise ConfigError(f"style must be European or American, got {self.style!r}")


@dataclass(frozen=True)
class BarrierIdentity:
    variant: str
    level: float
    direct: PriceEstimate
    dual: PriceEstimate
    eta: float

    @property
    def gap(self) -> float:
        return abs(self.direct.value - self.dual.value)

    @property
    def tol(self) -> float:
        return 3.0 * combined_se(self.direct.std_err, self.dual.std_err)

    @property
    def consistent(self) -> bool:
        return self.gap <= self.tol


def _barrier_event(clocks, variant: str, level: float, T: float) -> np.ndarray:
    if variant == "DI":
        return clocks.first_below[level] <= T
    if variant == "DO":
        return clocks.first_below[level] > T
    if variant == "UI":
        return clocks.first_above[level] <= T
    return clocks.first_above[level] > T  # UO


def barrier_price(
    model: ModelSpec,
    payoff: PayoffSpec,
    variant: str,
    level: float,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    p_ensemble: PathEnsemble | None = None,
    q_ensemble: PathEnsemble | None = None,
) -> BarrierIdentity:
    """Both sides of the knock-in/knock-out identity for a single-date payoff.

    The barrier event is defined through the hitting clocks (first time X <= D
    for down barriers, first time X > F for up barriers) on both measures, so
    discrete monitoring conventions cancel between the two sides.  Down levels
    must not exceed x0 and up levels must not fall below it.
    """
    if variant not in BARRIER_VARIANTS:
        raise ConfigError(f"variant must be one of {BARRIER_VARIANTS}")
    if len(payoff.times) != 1:
        raise UnsupportedPayoffError("barrier identities take a single-date payoff")
    eta = payoff.eta[0] if payoff.eta else None
    if eta is None or callable(eta) or not math.isfinite(eta):
        raise UnsupportedPayoffError("barrier payoff needs a finite boundary limit")
    down = variant in ("DI", "DO")
    if down and level > model.x0:
        raise ConfigError(f"down barrier {level} must lie at or below x0={model.x0}")
    if not down and level < model.x0:
        raise ConfigError(f"up barrier {level} must lie at or above x0={model.x0}")
    T = payoff.times[0]
    level = float(level)
    lv_below = (level,) if down else ()
    lv_above = () if down else (level,)

    p_ens = p_ensemble
    if p_ens is None:
        p_ens = simulate_p(
            model, T, dt, n_paths, seed, obs_times=(T,),
            levels_below=lv_below, levels_above=lv_above, n_workers=n_workers,
        )
    q_ens = q_ensemble
    if q_ens is None:
        q_ens = simulate_q(
            model, T, dt, n_paths, seed + 1, obs_times=(T,),
            levels_below=lv_below, levels_above=lv_above, n_workers=n_workers,
        )

    # direct side
    event_p = _barrier_event(p_ens.clocks, variant, level, T)
    h_vals = payoff.h(p_ens.at(T)[:, None]) * event_p
    m, se = block_mean_se(h_vals)
    direct = PriceEstimate(value=m, std_err=se, n_paths=p_ens.n_paths, method="DirectP")

    # dual side: main term with the boundary extension, minus the default term
    tau = q_ens.clocks.tau
    surv = tau > T
    dual_T = q_ens.dual_values[:, q_ens.column(T)]
    event_q = _barrier_event(q_ens.clocks, variant, level, T)
    gbar = np.where(surv, 0.0, eta)
    if surv.any():
        gbar[surv] = payoff.g(dual_T[surv, None])
    main = gbar * event_q

    if variant == "DI":
        default_ind = (q_ens.clocks.first_below[level] < tau) & (tau <= T)
    elif variant == "DO":
        default_ind = np.isinf(q_ens.clocks.first_below[level]) & (tau <= T)
    elif variant == "UI":
        default_ind = tau <= T
    else:
        default_ind = np.zeros(q_ens.n_paths, dtype=bool)

    per_path = main - eta * default_ind
    v, v_se = block_mean_se(per_path)
    mt, mt_se = block_mean_se(main)
    dtm, dtm_se = block_mean_se(eta * default_ind.astype(float))
    dual = PriceEstimate(
        value=v, std_err=v_se, n_paths=q_ens.n_paths, method="DecompositionQ",
        main_term=mt, main_se=mt_se, default_term=dtm, default_se=dtm_se,
    )
    return BarrierIdentity(variant=variant, level=level, direct=direct, dual=dual, eta=float(eta))


def _exchange_q_ensemble(model, K, horizon_sim, dt, n_paths, seed, n_workers):
    levels = (1.0 / K,) if K > 0.0 else ()
    if model.kind == "TwoAssetCorrelated":
        _, z_ens = simulate_two_asset(
            model, "Q", horizon_sim, dt, n_paths, seed,
            obs_times=(horizon_sim,), rho_levels=levels, n_workers=n_workers,
        )
        return z_ens
    if model.kind in ("InverseBes3", "NaturalScaleDiffusion"):
        # unit second asset: the ratio process is the dual itself
        ens = simulate_q(
            model, horizon_sim, dt, n_paths, seed,
            obs_times=(horizon_sim,), rho_levels=levels, n_workers=n_workers,
        )
        return ens
    raise UnsupportedModelError(f"exchange pricing is not available for {model.kind}")


def exchange_lastpassage(
    model: ModelSpec,
    spec: ExchangeSpec,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    horizon_mult: float = 4.0,
    n_workers: int = 1,
    z_ensemble: PathEnsemble | None = None,
) -> PriceEstimate:
    """Exchange option value from last-passage events of the ratio process."""
    K, T = spec.K, spec.T
    horizon_sim = max(horizon_mult * T, T) if T > 0 else max(horizon_mult * dt, dt)
    ens = z_ensemble
    if ens is None:
        ens = _exchange_q_ensemble(model, K, horizon_sim, dt, n_paths, seed, n_workers)

    tau = ens.clocks.tau
    z_end = ens.clocks.frozen_dual
    if K > 0.0:
        level = 1.0 / K
        if level not in ens.clocks.rho_time:
            raise ConfigError(
                f"level 1/K = {level:g} is not tracked by the supplied ensemble; "
                f"simulate with rho_levels including it (tracked: {sorted(ens.clocks.rho_time)})"
            )
        rho = ens.clocks.rho_time[level]
    else:
        rho = np.zeros(ens.n_paths)  # last passage of an unreachable level: empty-set convention

    weight = np.maximum(1.0 - K * z_end, 0.0)
    if spec.style == "European":
        ind = (rho <= T) & (tau > T)
    else:
        ind = rho <= np.minimum(tau, T)
    vals = weight * ind
    m, se = block_mean_se(vals)
    tail = float(((tau > T) & (tau <= ens.grid[-1])).mean())
    return PriceEstimate(
        value=m, std_err=se, n_paths=ens.n_paths, method="LastPassageQ",
        extras={"tail_mass": tail, "style": spec.style, "K": K, "T": T},
    )


@dataclass(frozen=True)
class RealWorldQuote:
    european: PriceEstimate
    american: PriceEstimate
    premium: PriceEstimate


def _check_american_payoff(h, eta):
    """American pricing needs h convex, h(0)=0, h(x) <= x and unit slope at infinity."""
    xs = np.geomspace(1e-6, 1e6, 121)
    vals = np.asarray(h(xs), dtype=float)
    if abs(eta - 1.0) > 1e-12:
        raise UnsupportedPayoffError("American real-world formula requires eta = 1")
    if not np.all(np.isfinite(vals)) or np.any(vals < -1e-12):
        raise UnsupportedPayoffError("payoff must be finite and nonnegative")
    if vals[0] > 1e-6 or np.any(vals > xs * (1.0 + 1e-9) + 1e-12):
        raise UnsupportedPayoffError("payoff must satisfy h(0) = 0 and h(x) <= x")
    second = vals[:-2] - 2.0 * vals[1:-1] + vals[2:]
    if np.any(second < -1e-6 * np.maximum(1.0, vals[1:-1])):
        raise UnsupportedPayoffError("payoff must be convex for the American formula")


def real_world_price(
    model: ModelSpec,
    h,
    T: float,
    *,
    eta: float = 1.0,
    style: str = "both",
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    horizon_mult: float = 1.0,
    n_workers: int = 1,
    z_ensemble: PathEnsemble | None = None,
) -> RealWorldQuote:
    """Real-world European/American values when the deflator may be strict.

    S = 1/Z is the discounted stock and Y the candidate deflator; the value of
    the European claim h(S_T) deflated by Y_T equals the Q-expectation of
    g(Z_T) minus the explosion correction, and the American value (for convex
    h with h(0) = 0, h <= identity, eta = 1) is the uncorrected Q-expectation.
    """
    if style not in ("both", "European", "American"):
        raise ConfigError(f"unknown style {style!r}")
    if style in ("both", "American"):
        _check_american_payoff(h, eta)

    horizon_sim = max(horizon_mult * T, T)
    ens = z_ensemble
    if ens is None:
        if model.kind == "TwoAssetCorrelated":
            _, ens = simulate_two_asset(
                model, "Q", horizon_sim, dt, n_paths, seed, obs_times=(T, horizon_sim), n_workers=n_workers
            )
        else:
            ens = simulate_q(model, horizon_sim, dt, n_paths, seed, obs_times=(T, horizon_sim), n_workers=n_workers)
    zcol = ens.at(T) if ens.stores == "ratio" else ens.dual_values[:, ens.column(T)]
    tau = ens.clocks.tau

    def g_of(z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, float(eta))
        pos = z > 0.0
        out[pos] = z[pos] * np.asarray(h(1.0 / z[pos]), dtype=float)
        return out

    g_T = g_of(zcol)
    dead = tau <= T
    prem_vals = np.where(dead, g_of(ens.clocks.frozen_dual), 0.0)

    a, a_se = block_mean_se(g_T)
    p, p_se = block_mean_se(prem_vals)
    e_vals = g_T - prem_vals
    e, e_se = block_mean_se(e_vals)
    n = ens.n_paths
    return RealWorldQuote(
        european=PriceEstimate(value=e, std_err=e_se, n_paths=n, method="RealWorldE"),
        american=PriceEstimate(value=a, std_err=a_se, n_paths=n, method="RealWorldA"),
        premium=PriceEstimate(value=p, std_err=p_se, n_paths=n, method="RealWorldPremium"),
    )


def chooser_price(
    model: ModelSpec,
    K: float,
    S: float,
    T: float,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    q_ensemble: PathEnsemble | None = None,
) -> PriceEstimate:
    """Chooser value via the Q decomposition; needs the conditional-mean map.

    Only the inverse-Bessel model carries that map in closed form here, so
    other kinds are rejected rather than approximated.
    """
    from .duality import price_decomposition_q

    is_bes3 = model.kind == "InverseBes3" or model.params.get("alpha") == 2.0
    if not is_bes3:
        raise UnsupportedModelError("chooser pricing requires the inverse-Bessel conditional mean")
    payoff = chooser(K, S, T)
    return price_decomposition_q(
        model, payoff, dt=dt, n_paths=n_paths, seed=seed, n_workers=n_workers, ensemble=q_ensemble
    )
