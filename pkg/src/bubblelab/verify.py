"""Executable identity suite.

Each function turns one of the model-level identities into an IdentityCheck
with a Monte Carlo tolerance of three combined standard errors:

* mass identity: the P-mean of X_t equals the Q-survival probability at t;
* martingale property of the reciprocal under Q (constant mean);
* supermartingale monotonicity of the P-mean (strictly decreasing mean is the
  bubble signature, constant mean the true-martingale case);
* three-estimator agreement for a payoff (direct, survival, decomposition);
* exactness of value = main - default on a shared ensemble.

The CLI ``verify`` subcommand aggregates these and exits nonzero on failure.
"""

from __future__ import annotations

from .duality import price_decomposition_q, price_direct_p, price_survival_q
from .engine import simulate_p, simulate_q
from .models import ModelSpec, classify_strictness
from .payoffs import PayoffSpec
from .stats import IdentityCheck, block_mean_se, binomial_se, combined_se

__all__ = [
    "mass_identity_checks",
    "dual_martingale_checks",
    "supermartingale_checks",
    "three_estimator_checks",
    "decomposition_exactness_check",
    "standard_suite",
]


def _is_strict(model: ModelSpec) -> bool:
    if model.kind == "InverseBes3":
        return True
    if model.kind == "NaturalScaleDiffusion":
        return classify_strictness(model).strict
    raise ValueError(f"strictness of {model.kind} is not decidable here")


def mass_identity_checks(model, *, ts=(0.25, 0.5, 1.0), dt=1e-3, n_paths=50_000, seed=7, n_workers=1):
    horizon = max(ts)
    p_ens = simulate_p(model, horizon, dt, n_paths, seed, obs_times=ts, n_workers=n_workers)
    q_ens = simulate_q(model, horizon, dt, n_paths, seed + 1, obs_times=ts, n_workers=n_workers)
    checks = []
    for t in ts:
        pm, pse = block_mean_se(p_ens.at(t))
        qs = float((q_ens.clocks.tau > t).mean())
        qse = binomial_se(qs, q_ens.n_paths)
        checks.append(IdentityCheck(
            name=f"mass identity t={t:g} [{model.label}]",
            lhs=pm, rhs=qs, se=combined_se(pse, qse),
        ))
    return checks


def dual_martingale_checks(model, *, ts=(0.25, 0.5, 1.0), dt=1e-3, n_paths=50_000, seed=11, n_workers=1):
    """Mean of 1/X under Q (zero after absorption) stays at its initial value."""
    q_ens = simulate_q(model, max(ts), dt, n_paths, seed, obs_times=ts, n_workers=n_workers)
    target = 1.0 / model.x0
    checks = []
    for t in ts:
        m, se = block_mean_se(q_ens.dual_values[:, q_ens.column(t)])
        checks.append(IdentityCheck(
            name=f"dual martingale mean t={t:g} [{model.label}]", lhs=m, rhs=target, se=se,
        ))
    return checks


def supermartingale_checks(model, *, ts=(0.25, 0.5, 0.75, 1.0), dt=1e-3, n_paths=50_000, seed=13, n_workers=1):
    p_ens = simulate_p(model, max(ts), dt, n_paths, seed, obs_times=ts, n_workers=n_workers)
    strict = _is_strict(model)
    checks = []
    for t0, t1 in zip(ts[:-1], ts[1:]):
        diff = p_ens.at(t1) - p_ens.at(t0)
        m, se = block_mean_se(diff)
        if strict:
            # nonincreasing: the paired increment must not be significantly positive
            checks.append(IdentityCheck(
                name=f"supermartingale decay {t0:g}->{t1:g} [{model.label}]",
                lhs=max(m, 0.0), rhs=0.0, se=se,
            ))
        else:
            checks.append(IdentityCheck(
                name=f"martingale flat {t0:g}->{t1:g} [{model.label}]",
                lhs=m, rhs=0.0, se=se,
            ))
    return checks


def three_estimator_checks(model, payoff: PayoffSpec, *, dt=1e-3, n_paths=50_000, seed=17, n_workers=1):
    """Pairwise agreement of the three estimators of the same P-expectation."""
    direct = price_direct_p(model, payoff, dt=dt, n_paths=n_paths, seed=seed, n_workers=n_workers)
    surv = price_survival_q(model, payoff, dt=dt, n_paths=n_paths, seed=seed + 1, n_workers=n_workers)
    deco = price_decomposition_q(model, payoff, dt=dt, n_paths=n_paths, seed=seed + 2, n_workers=n_workers)
    pairs = [("direct~survival", direct, surv), ("direct~decomposition", direct, deco),
             ("survival~decomposition", surv, deco)]
    return [
        IdentityCheck(
            name=f"{payoff.label} {tag} [{model.label}]",
            lhs=a.value, rhs=b.value, se=combined_se(a.std_err, b.std_err),
        )
        for tag, a, b in pairs
    ]


def decomposition_exactness_check(model, payoff, *, dt=1e-3, n_paths=20_000, seed=19, n_workers=1):
    """value == main - default to machine precision on one ensemble."""
    q_ens = simulate_q(model, payoff.horizon, dt, n_paths, seed, obs_times=payoff.times, n_workers=n_workers)
    deco = price_decomposition_q(model, payoff, ensemble=q_ens)
    surv = price_survival_q(model, payoff, ensemble=q_ens)
    gap1 = abs(deco.value - (deco.main_term - deco.default_term))
    gap2 = abs(deco.value - surv.value)
    return [
        IdentityCheck(name=f"{payoff.label} value=main-default [{model.label}]",
                      lhs=gap1, rhs=0.0, se=0.0, slack=1e-12),
        IdentityCheck(name=f"{payoff.label} shared-ensemble survival==decomposition [{model.label}]",
                      lhs=gap2, rhs=0.0, se=0.0, slack=1e-12),
    ]


def standard_suite(model, payoffs=(), *, dt=1e-3, n_paths=50_000, seed=23, n_workers=1):
    checks = []
    checks += mass_identity_checks(model, dt=dt, n_paths=n_paths, seed=seed, n_workers=n_workers)
    checks += dual_martingale_checks(model, dt=dt, n_paths=n_paths, seed=seed + 100, n_workers=n_workers)
    try:
        checks += supermartingale_checks(model, dt=dt, n_paths=n_paths, seed=seed + 200, n_workers=n_workers)
    except ValueError:
        pass
    for payoff in payoffs:
        if payoff.eta is not None:
            checks += three_estimator_checks(model, payoff, dt=dt, n_paths=n_paths, seed=seed + 300, n_workers=n_workers)
            checks += decomposition_exactness_check(model, payoff, dt=dt, n_paths=max(2000, n_paths // 4), seed=seed + 400, n_workers=n_workers)
    return checks
