"""Optional projection of the inverse-radius process onto a lagged filtration.

Take X = 1/|B| for a three-dimensional Brownian motion B started at (1, 0, 0)
and project it onto the filtration that sees the first two coordinates
continuously but the third only at multiples of 1/n.  The projection is a
cadlag local martingale with jumps at the refresh times k/n, given pointwise
by the one-dimensional Gaussian smoothing

    proj(t) = E[ (B1_t^2 + B2_t^2 + z^2)^(-1/2) ],   z ~ N(B3 at last refresh, t - refresh).

At refresh times the smoothing width is zero and the projection equals X
itself.  Its expectation decays in t like the mean of X, which gives the
acceptance identities tested against the same driver paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import rng
from .errors import ConfigError, NumericsError

__all__ = ["ProjectionResult", "optional_projection_bes3"]


@dataclass(frozen=True)
class ProjectionResult:
    grid: np.ndarray
    projected: np.ndarray       # n_paths x n_times, the projected process
    inverse_radius: np.ndarray  # 1/|B_t| on the same driver paths
    refresh: int                # refreshes per unit time
    seed: int

    def to_ensemble(self):
        """Wrap the projected paths as a P-measure ensemble (no absorption clocks)."""
        from .engine import EventClocks, PathEnsemble

        clocks = EventClocks.empty(self.projected.shape[0], measure="P")
        clocks.running_min = np.minimum.accumulate(self.projected, axis=1)
        clocks.running_max = np.maximum.accumulate(self.projected, axis=1)
        return PathEnsemble(
            measure="P",
            grid=self.grid,
            values=self.projected,
            clocks=clocks,
            seed=self.seed,
            substream_ids=rng.substream_ids(self.seed, self.projected.shape[0]),
            dt=math.nan,
            model_label=f"projected_inverse_radius(n={self.refresh})",
        )


def _smoothed_inverse_norm(r2: np.ndarray, a: np.ndarray, s: float, nodes: int) -> np.ndarray:
    """E[(r2 + z^2)^(-1/2)] with z ~ N(a, s), by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    out = np.zeros_like(r2)
    scale = math.sqrt(2.0 * s)
    for xk, wk in zip(x, w):
        z = a + scale * xk
        out += wk / np.sqrt(r2 + z * z)
    return out / math.sqrt(math.pi)


def optional_projection_bes3(
    n: int,
    t_grid,
    n_paths: int,
    seed: int,
    *,
    nodes: int = 64,
    tol: float = 1e-4,
) -> ProjectionResult:
    """Simulate the projected inverse-radius process on ``t_grid``.

    ``n`` is the refresh frequency of the third coordinate.  Quadrature
    convergence is checked by doubling the Gauss-Hermite order; paths that
    still disagree are refined with adaptive quadrature, and a refinement
    failure raises ``NumericsError``.
    """
    if n < 1:
        raise ConfigError("refresh frequency n must be at least 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0.0):
        raise ConfigError("t_grid must be nonnegative")

    refresh_times = np.floor(t_grid * n) / n
    all_times = np.unique(np.concatenate([[0.0], t_grid, refresh_times]))
    proj = np.empty((n_paths, t_grid.size))
    invr = np.empty((n_paths, t_grid.size))

    def runner(blk, lo, hi):
        m = hi - lo
        gen = rng.substream(seed, blk, rng.GAUSSIAN_STREAM)
        b = np.zeros((m, 3))
        b[:, 0] = 1.0
        stored = {0.0: b.copy()}
        t_prev = 0.0
        for t in all_times[1:]:
            b = b + math.sqrt(t - t_prev) * gen.standard_normal((m, 3))
            stored[t] = b.copy()
            t_prev = t

        for j, t in enumerate(t_grid):
            bt = stored[t]
            r2 = bt[:, 0] ** 2 + bt[:, 1] ** 2
            radius = np.sqrt(r2 + bt[:, 2] ** 2)
            invr[lo:hi, j] = 1.0 / np.maximum(radius, 1e-300)
            s = t - refresh_times[j]
            if s <= 1e-15:
                proj[lo:hi, j] = invr[lo:hi, j]
                continue
            a = stored[refresh_times[j]][:, 2]
            coarse = _smoothed_inverse_norm(r2, a, s, nodes)
            fine = _smoothed_inverse_norm(r2, a, s, 2 * nodes)
            bad = np.abs(fine - coarse) > tol * np.maximum(1.0, np.abs(fine))
            if bad.any():
                idx = np.where(bad)[0]
                for i in idx:
                    val, err = integrate.quad(
                        lambda z: 1.0 / math.sqrt(r2[i] + z * z)
                        * math.exp(-0.5 * (z - a[i]) ** 2 / s) / math.sqrt(2.0 * math.pi * s),
                        -np.inf, np.inf, epsabs=1e-10, epsrel=1e-8, limit=400,
                    )
                    if err > 1e-5 * max(1.0, abs(val)):
                        raise NumericsError(
                            f"projection quadrature failed at t={t:g} (path {lo + i}): err={err:g}"
                        )
                    fine[i] = val
            proj[lo:hi, j] = fine
        return {}

    for blk, lo, hi in rng.iter_blocks(n_paths):
        runner(blk, lo, hi)

    return ProjectionResult(grid=t_grid, projected=proj, inverse_radius=invr, refresh=n, seed=seed)
