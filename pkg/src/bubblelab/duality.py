"""Price one expectation three ways.

A path functional of X under P can be estimated directly from P-paths, or
from Q-paths of the reciprocal with a survival indicator, or from Q-paths via
the main-term / default-term decomposition.  The decomposition's default term
is the bubble contribution: it collects the boundary limit of the transformed
payoff over the interval in which the explosion time falls.

``price_survival_q`` and ``price_decomposition_q`` applied to the same
ensemble satisfy value = main - default exactly path-batch-wise; estimator
disagreement across independent ensembles is statistical only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import PathEnsemble, simulate_p, simulate_q
from .errors import InputError, UnsupportedPayoffError
from .models import ModelSpec
from .payoffs import PayoffSpec
from .stats import binomial_se, block_mean_se

__all__ = [
    "PriceEstimate",
    "BubbleTerm",
    "price_direct_p",
    "price_survival_q",
    "price_decomposition_q",
    "corrected_price",
    "bubble_term",
    "reweight_price",
]

MAX_REJECT_FRACTION = 1e-3


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    std_err: float
    n_paths: int
    method: str
    main_term: float = math.nan
    main_se: float = math.nan
    default_term: float = math.nan
    default_se: float = math.nan
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BubbleTerm:
    t: float
    T: float
    value: float
    std_err: float
    n_paths: int


def _p_ensemble(model, payoff, dt, n_paths, seed, n_workers, ensemble):
    if ensemble is not None:
        return ensemble
    return simulate_p(model, payoff.horizon, dt, n_paths, seed, obs_times=payoff.times, n_workers=n_workers)


def _q_ensemble(model, payoff, dt, n_paths, seed, n_workers, ensemble):
    if ensemble is not None:
        return ensemble
    return simulate_q(model, payoff.horizon, dt, n_paths, seed, obs_times=payoff.times, n_workers=n_workers)


def price_direct_p(
    model: ModelSpec,
    payoff: PayoffSpec,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    ensemble: PathEnsemble | None = None,
) -> PriceEstimate:
    """Plain Monte Carlo mean of h over a P-ensemble."""
    ens = _p_ensemble(model, payoff, dt, n_paths, seed, n_workers, ensemble)
    cols = np.column_stack([ens.at(t) for t in payoff.times])
    vals = np.asarray(payoff.h(cols), dtype=float)
    good = np.isfinite(vals)
    n_bad = int((~good).sum())
    if n_bad > MAX_REJECT_FRACTION * ens.n_paths:
        raise InputError(f"payoff produced {n_bad} non-finite values out of {ens.n_paths} paths")
    m, se = block_mean_se(vals[good])
    return PriceEstimate(
        value=m, std_err=se, n_paths=ens.n_paths, method="DirectP",
        extras={"rejected": n_bad, "diagnostics": dict(ens.diagnostics)},
    )


def _dual_at_times(ens: PathEnsemble, times) -> np.ndarray:
    dv = ens.dual_values
    return np.column_stack([dv[:, ens.column(t)] for t in times])


def price_survival_q(
    model: ModelSpec,
    payoff: PayoffSpec,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    ensemble: PathEnsemble | None = None,
) -> PriceEstimate:
    """E over Q of g(1/X at dates) restricted to paths that survive to the last date."""
    ens = _q_ensemble(model, payoff, dt, n_paths, seed, n_workers, ensemble)
    dual = _dual_at_times(ens, payoff.times)
    surv = ens.clocks.tau > payoff.horizon
    vals = np.zeros(ens.n_paths)
    if surv.any():
        vals[surv] = payoff.g(dual[surv])
    m, se = block_mean_se(vals)
    return PriceEstimate(
        value=m, std_err=se, n_paths=ens.n_paths, method="SurvivalQ",
        extras={"survival_fraction": float(surv.mean())},
    )


def _decomposition_core(ens: PathEnsemble, payoff: PayoffSpec):
    if payoff.eta is None:
        raise UnsupportedPayoffError(f"payoff {payoff.label!r} supplies no eta limits")
    times = np.asarray(payoff.times, dtype=float)
    dual = _dual_at_times(ens, payoff.times)
    tau = ens.clocks.tau
    surv = tau > times[-1]

    main = np.zeros(ens.n_paths)
    default = np.zeros(ens.n_paths)
    if surv.any():
        main[surv] = payoff.g(dual[surv])
    dead = ~surv
    if dead.any():
        # interval index: number of monitoring dates strictly before tau
        k_idx = np.searchsorted(times, tau[dead], side="left")
        for k in np.unique(k_idx):
            rows = np.where(dead)[0][k_idx == k]
            eta_vals = payoff.eta_value(int(k), dual[rows, :k] if k > 0 else np.zeros((rows.size, 0)))
            main[rows] = eta_vals
            default[rows] = eta_vals
    return main, default


def price_decomposition_q(
    model: ModelSpec,
    payoff: PayoffSpec,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    ensemble: PathEnsemble | None = None,
) -> PriceEstimate:
    """Main term minus default term over a Q-ensemble.

    The main term evaluates the boundary extension of g (post-explosion dual
    coordinates are exactly zero by construction, so the extension takes the
    eta value of the explosion interval); the default term collects the same
    eta over {t_k < tau <= t_{k+1}}.
    """
    ens = _q_ensemble(model, payoff, dt, n_paths, seed, n_workers, ensemble)
    main, default = _decomposition_core(ens, payoff)
    per_path = main - default
    v, v_se = block_mean_se(per_path)
    m, m_se = block_mean_se(main)
    d, d_se = block_mean_se(default)
    return PriceEstimate(
        value=v, std_err=v_se, n_paths=ens.n_paths, method="DecompositionQ",
        main_term=m, main_se=m_se, default_term=d, default_se=d_se,
    )


def corrected_price(
    model: ModelSpec,
    payoff: PayoffSpec,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    ensemble: PathEnsemble | None = None,
) -> PriceEstimate:
    """Bubble-corrected price: the decomposition's main term with the default zeroed.

    Equivalent to treating the explosion time as infinite under Q; for a true
    martingale underlying this coincides with the fundamental value.
    """
    ens = _q_ensemble(model, payoff, dt, n_paths, seed, n_workers, ensemble)
    main, _ = _decomposition_core(ens, payoff)
    m, m_se = block_mean_se(main)
    return PriceEstimate(
        value=m, std_err=m_se, n_paths=ens.n_paths, method="Corrected",
        main_term=m, main_se=m_se, default_term=0.0, default_se=0.0,
    )


def bubble_term(
    model: ModelSpec,
    t: float,
    T: float,
    *,
    dt: float = 1e-3,
    n_paths: int = 100_000,
    seed: int = 0,
    n_workers: int = 1,
    ensemble: PathEnsemble | None = None,
) -> BubbleTerm:
    """Expected bubble over [t, T]: the Q-mass of explosions in (t, T]."""
    if not (0.0 <= t <= T):
        raise InputError(f"need 0 <= t <= T, got t={t}, T={T}")
    ens = ensemble
    if ens is None:
        ens = simulate_q(model, T, dt, n_paths, seed, obs_times=(T,), n_workers=n_workers)
    tau = ens.clocks.tau
    p = float(((tau > t) & (tau <= T)).mean())
    return BubbleTerm(t=t, T=T, value=p, std_err=binomial_se(p, ens.n_paths), n_paths=ens.n_paths)


def reweight_price(q_ensemble: PathEnsemble, functional, t: float | None = None) -> PriceEstimate:
    """Estimate a P-expectation by reweighting a true-martingale Q-ensemble.

    The reweighting realizes dP = V_t dQ on the time-t sigma-field, where V is
    the simulated true Q-martingale (the ensemble's dual scale).  Absorbed
    paths carry zero weight; ``functional`` receives the X values at t for the
    unabsorbed paths only.
    """
    if q_ensemble.measure != "Q":
        raise InputError("reweight_price expects a Q-ensemble")
    if t is None:
        t = float(q_ensemble.grid[-1])
    x_t = q_ensemble.at(t)
    v_t = q_ensemble.dual_values[:, q_ensemble.column(t)]
    live = v_t > 0.0
    contrib = np.zeros(q_ensemble.n_paths)
    if live.any():
        f_vals = np.asarray(functional(x_t[live]), dtype=float)
        bad = ~np.isfinite(f_vals)
        if bad.sum() > MAX_REJECT_FRACTION * q_ensemble.n_paths:
            raise InputError(f"functional produced {int(bad.sum())} non-finite values")
        f_vals = np.where(bad, 0.0, f_vals)
        # weight V_t / V_0 = V_t * x0, so F == 1 integrates to mass one
        contrib[live] = f_vals * v_t[live] * q_ensemble.x0
    m, se = block_mean_se(contrib)
    return PriceEstimate(value=m, std_err=se, n_paths=q_ensemble.n_paths, method="ReweightQ")
