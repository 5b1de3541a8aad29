"""Payoff descriptions for the duality estimators.

Each payoff carries its monitoring dates, the payoff map ``h`` on price
coordinates, and the boundary limits ``eta`` of the transformed payoff
``g(y) = y_n * h(1/y_1, ..., 1/y_n)`` as trailing coordinates go to zero.
The limits are supplied analytically per payoff; numerical limits of ``g``
near the boundary are ill-conditioned and deliberately not attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .closedform import bes3_mean
from .errors import UnsupportedPayoffError

__all__ = ["PayoffSpec", "call", "put", "capped_call", "reset_call", "ratio_call", "chooser"]


@dataclass(frozen=True)
class PayoffSpec:
    label: str
    times: tuple
    h: Callable[[np.ndarray], np.ndarray]
    # eta[k] is the limit of g given the first k dual coordinates: a float for
    # k = 0, for k >= 1 a float or a callable on the (n, k) dual matrix.
    eta: Optional[tuple] = None
    g_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    bounded: bool = False

    @property
    def horizon(self) -> float:
        return max(self.times)

    def g(self, dual: np.ndarray) -> np.ndarray:
        """g evaluated at strictly positive dual coordinates."""
        dual = np.atleast_2d(dual)
        if self.g_fn is not None:
            return self.g_fn(dual)
        with np.errstate(over="ignore"):
            return dual[:, -1] * self.h(1.0 / dual)

    def eta_value(self, k: int, dual_prefix: np.ndarray) -> np.ndarray:
        if self.eta is None:
            raise UnsupportedPayoffError(f"payoff {self.label!r} has no boundary limits")
        e = self.eta[k]
        if callable(e):
            return np.asarray(e(np.atleast_2d(dual_prefix)), dtype=float)
        return np.full(dual_prefix.shape[0] if dual_prefix.ndim == 2 else 1, float(e))


def call(K: float, T: float) -> PayoffSpec:
    K = float(K)
    return PayoffSpec(
        label=f"call(K={K:g},T={T:g})",
        times=(float(T),),
        h=lambda x: np.maximum(x[:, -1] - K, 0.0),
        eta=(1.0,),
        g_fn=lambda y: np.maximum(1.0 - K * y[:, -1], 0.0),
    )


def put(K: float, T: float) -> PayoffSpec:
    K = float(K)
    return PayoffSpec(
        label=f"put(K={K:g},T={T:g})",
        times=(float(T),),
        h=lambda x: np.maximum(K - x[:, -1], 0.0),
        eta=(0.0,),
        g_fn=lambda y: np.maximum(K * y[:, -1] - 1.0, 0.0),
        bounded=True,
    )


def capped_call(cap: float, T: float) -> PayoffSpec:
    """h(x) = min(x, cap): bounded, so the transformed payoff vanishes at the boundary."""
    c = float(cap)
    return PayoffSpec(
        label=f"capped(c={c:g},T={T:g})",
        times=(float(T),),
        h=lambda x: np.minimum(x[:, -1], c),
        eta=(0.0,),
        g_fn=lambda y: np.minimum(1.0, c * y[:, -1]),
        bounded=True,
    )


def reset_call(K: float, reset_dates: Sequence[float], T: float) -> PayoffSpec:
    """Call whose strike resets to the running price at each reset date.

    All boundary limits equal one, so the default term telescopes to the full
    bubble over [0, T]: the reset feature does not change the default of a
    plain call.
    """
    K = float(K)
    dates = tuple(float(t) for t in reset_dates)
    if any(t >= T for t in dates):
        raise UnsupportedPayoffError("reset dates must precede maturity")
    times = dates + (float(T),)

    def h(x):
        strike = np.minimum(K, np.min(x[:, :-1], axis=1))
        return np.maximum(x[:, -1] - strike, 0.0)

    def g_fn(y):
        strike = np.minimum(K, np.min(1.0 / y[:, :-1], axis=1))
        return np.maximum(1.0 - y[:, -1] * strike, 0.0)

    return PayoffSpec(
        label=f"reset_call(K={K:g},T={T:g},n={len(dates)})",
        times=times,
        h=h,
        eta=tuple([1.0] * len(times)),
        g_fn=g_fn,
    )


def ratio_call(K: float, S: float, T: float) -> PayoffSpec:
    """Call on the price ratio X_T / X_S."""
    K = float(K)
    if not (0.0 < S < T):
        raise UnsupportedPayoffError("need 0 < S < T for a ratio call")

    return PayoffSpec(
        label=f"ratio_call(K={K:g},S={S:g},T={T:g})",
        times=(float(S), float(T)),
        h=lambda x: np.maximum(x[:, 1] / x[:, 0] - K, 0.0),
        eta=(0.0, lambda ym: ym[:, 0]),
        g_fn=lambda y: np.maximum(y[:, 0] - K * y[:, 1], 0.0),
    )


def chooser(K: float, S: float, T: float, conditional_mean: Callable | None = None) -> PayoffSpec:
    """Chooser: at S the holder takes the call if its time-S value beats the put's.

    Without put-call parity the decision rule compares the conditional mean of
    X_T given X_S with the strike.  ``conditional_mean`` maps (x, dt) to
    E[X_{S+dt} | X_S = x]; it defaults to the inverse-Bessel closed form, the
    one model for which it is available in closed form here.
    """
    K = float(K)
    if not (0.0 < S < T):
        raise UnsupportedPayoffError("need 0 < S < T for a chooser")
    m = conditional_mean or (lambda x, dt: bes3_mean(x, dt))
    dt_m = float(T) - float(S)
    # limit of the conditional mean for large spot
    m_inf = math.sqrt(2.0 / (math.pi * dt_m))
    eta0 = 1.0 if m_inf > K else 0.0

    def h(x):
        pick_call = m(x[:, 0], dt_m) >= K
        c = np.maximum(x[:, 1] - K, 0.0)
        p = np.maximum(K - x[:, 1], 0.0)
        return np.where(pick_call, c, p)

    def g_fn(y):
        pick_call = m(1.0 / y[:, 0], dt_m) >= K
        c = np.maximum(1.0 - K * y[:, 1], 0.0)
        p = np.maximum(K * y[:, 1] - 1.0, 0.0)
        return np.where(pick_call, c, p)

    def eta1(ym):
        return (m(1.0 / ym[:, 0], dt_m) >= K).astype(float)

    return PayoffSpec(
        label=f"chooser(K={K:g},S={S:g},T={T:g})",
        times=(float(S), float(T)),
        h=h,
        eta=(eta0, eta1),
        g_fn=g_fn,
    )
