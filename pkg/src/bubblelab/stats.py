"""Small statistics helpers: deterministic means, standard errors, agreement tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def block_mean_se(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error of the mean.

    Uses numpy's pairwise summation on the full array, which is deterministic
    for a fixed array layout.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n == 0:
        return math.nan, math.nan
    m = float(x.mean())
    if n == 1:
        return m, 0.0
    var = float(np.square(x - m).sum()) / (n - 1)
    return m, math.sqrt(var / n)


def binomial_se(p_hat: float, n: int) -> float:
    p = min(max(p_hat, 0.0), 1.0)
    return math.sqrt(p * (1.0 - p) / n) if n > 0 else math.nan


def combined_se(*ses: float) -> float:
    return math.sqrt(sum(s * s for s in ses))


@dataclass(frozen=True)
class IdentityCheck:
    """One executable identity: |lhs - rhs| <= k_sigma * se (+ slack)."""

    name: str
    lhs: float
    rhs: float
    se: float
    k_sigma: float = 3.0
    slack: float = 0.0

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def tol(self) -> float:
        return self.k_sigma * self.se + self.slack

    @property
    def passed(self) -> bool:
        return bool(self.gap <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: lhs={self.lhs:.6f} rhs={self.rhs:.6f} "
            f"|gap|={self.gap:.3e} tol={self.tol:.3e}"
        )
