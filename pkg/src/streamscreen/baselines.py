"""Competitor methods: pooled/mean estimators and the moving-window test.

The pooled estimator runs one exponentially weighted least squares fit over
all streams jointly; the mean estimator averages the per-stream fits.  The
moving-window nonparametric test (MWNT) computes, per stream and time point,
a kernel-weighted second-order U-statistic of the normalized residuals over
a trailing window, studentises it with the plug-in pair-sum variance, turns
the result into a one-sided normal p-value, and applies Benjamini-Hochberg
across streams.  Residuals are whitened beforehand by inverting the Cholesky
factor of a banded stationary correlation estimated on the warm-up sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded
from scipy.stats import norm

from .core import WeightSpec
from .tracker import ewls_solve

__all__ = [
    "PooledTrackerState",
    "fresh_pooled_state",
    "pooled_update",
    "pooled_coefficient",
    "mean_estimator",
    "MwntConfig",
    "mwnt_statistic",
    "mwnt_scan",
    "estimate_banded_correlation",
    "decorrelate",
    "bh_adjust",
    "run_mwnt",
]


# ---------------------------------------------------------------------------
# Pooled and mean estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PooledTrackerState:
    """Cross-stream weighted Gram sum and right-hand side for one lambda."""

    gram: np.ndarray   # (d, d)
    rhs: np.ndarray    # (d,)
    phi: float
    last_time: float | None = None
    n_seen: int = 0


def fresh_pooled_state(d: int) -> PooledTrackerState:
    return PooledTrackerState(gram=np.zeros((d, d)), rhs=np.zeros(d), phi=0.0)


def pooled_update(
    state: PooledTrackerState, t: float, x: np.ndarray, y: np.ndarray, spec: WeightSpec
) -> PooledTrackerState:
    """Absorb one time slice (all present streams) into the pooled fit."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if state.last_time is None:
        w = 1.0
    else:
        if t <= state.last_time:
            raise ValueError("batch time must advance")
        w = math.exp(-spec.neg_log_lambda * (t - state.last_time))
    gram = w * state.gram + x.T @ x
    rhs = w * state.rhs + x.T @ y
    phi = w * state.phi + x.shape[0]
    return replace(
        state, gram=gram, rhs=rhs, phi=phi, last_time=t, n_seen=state.n_seen + x.shape[0]
    )


def pooled_coefficient(state: PooledTrackerState) -> np.ndarray:
    """Current pooled coefficient, ridge-stabilised while warming."""
    beta, _ = ewls_solve(state.gram, state.rhs, np.asarray(state.n_seen))
    return beta


def mean_estimator(per_stream_betas: np.ndarray) -> np.ndarray:
    """Column-wise average of the per-stream coefficient estimates."""
    b = np.asarray(per_stream_betas, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] < 1:
        raise ValueError("expected a (p, d) matrix")
    return b.mean(axis=0)


# ---------------------------------------------------------------------------
# Moving-window nonparametric test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MwntConfig:
    window_n: int = 400
    bandwidth: float = 72.0   # 0.03 * N at the reference scale
    alpha: float = 0.1
    omega: int = 20           # banded decorrelation range

    def __post_init__(self) -> None:
        if self.window_n < 2:
            raise ValueError("window_n must be at least 2")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


def _epanechnikov(u: np.ndarray) -> np.ndarray:
    return 0.75 * np.clip(1.0 - u**2, 0.0, None)


def mwnt_statistic(z_window: np.ndarray, times: np.ndarray, cfg: MwntConfig):
    """Windowed kernel U-statistic and its one-sided normal p-value.

    stat = [n(n-1)]^-1 * sum_{i != k} K((t_i - t_k)/b) z_i z_k, studentised
    by vhat = [2 / (n^2 (n-1)^2)] * sum_{i != k} K^2 z_i^2 z_k^2.  Large
    positive values indicate misfit.
    """
    z = np.asarray(z_window, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    n = cfg.window_n
    if z.shape[0] != n or t.shape[0] != n:
        raise ValueError(f"window must contain exactly {n} residuals")
    kern = _epanechnikov((t[:, None] - t[None, :]) / cfg.bandwidth)
    np.fill_diagonal(kern, 0.0)
    stat = float(z @ kern @ z) / (n * (n - 1))
    z2 = z**2
    vhat = 2.0 * float(z2 @ (kern**2) @ z2) / (n**2 * (n - 1) ** 2)
    if vhat <= 0.0:
        return stat, 1.0
    return stat, float(norm.sf(stat / math.sqrt(vhat)))


def mwnt_scan(z: np.ndarray, cfg: MwntConfig) -> tuple[np.ndarray, np.ndarray]:
    """Statistics and p-values at every unit-spaced time point, per stream.

    Exploits the compact kernel support: only gaps g < bandwidth contribute,
    so each window sum decomposes into at most ceil(b) - 1 lagged-product
    sums maintained by cumulative sums.  Equivalent to calling
    `mwnt_statistic` at each complete window (`test_baselines` pins this).

    Positions with incomplete windows (or NaN content) get stat NaN, p 1.
    """
    z = np.asarray(z, dtype=np.float64)
    p, n_total = z.shape
    n = cfg.window_n
    gmax = min(n - 1, max(int(math.ceil(cfg.bandwidth)) - 1, 0))
    gaps = np.arange(1, gmax + 1)
    kg = _epanechnikov(gaps / cfg.bandwidth)

    stats = np.full((p, n_total), np.nan)
    pvals = np.ones((p, n_total))
    if n_total < n or gmax == 0:
        return stats, pvals

    norm_stat = 1.0 / (n * (n - 1))
    norm_var = 2.0 / (n**2 * (n - 1) ** 2)
    for j in range(p):
        zj = z[j]
        s_num = np.zeros(n_total)
        s_den = np.zeros(n_total)
        for g, k in zip(gaps, kg):
            # a window of n points holds n - g pairs at gap g, and both pair
            # endpoints must lie inside the window
            shift = n - g
            prod = np.zeros(n_total)
            prod[g:] = zj[g:] * zj[:-g]
            csum = np.cumsum(prod)
            win = csum.copy()
            win[shift:] = csum[shift:] - csum[:-shift]
            s_num += k * win
            prod2 = np.zeros(n_total)
            prod2[g:] = (zj[g:] ** 2) * (zj[:-g] ** 2)
            csum2 = np.cumsum(prod2)
            win2 = csum2.copy()
            win2[shift:] = csum2[shift:] - csum2[:-shift]
            s_den += (k**2) * win2
        stat = 2.0 * s_num * norm_stat          # both (i,k) orderings
        vhat = 2.0 * s_den * norm_var
        valid = np.zeros(n_total, dtype=bool)
        valid[n - 1:] = True
        finite = np.isfinite(stat) & (vhat > 0.0)
        ok = valid & finite
        stats[j, ok] = stat[ok]
        with np.errstate(invalid="ignore"):
            pvals[j, ok] = norm.sf(stat[ok] / np.sqrt(vhat[ok]))
    return stats, pvals


def estimate_banded_correlation(z: np.ndarray, omega: int) -> np.ndarray:
    """Autocorrelations r_0..r_omega pooled over streams, r_0 = 1.

    NaN entries (not-yet-defined residuals) are ignored pairwise.
    """
    z = np.asarray(z, dtype=np.float64)
    corr = np.zeros(omega + 1)
    corr[0] = 1.0
    c0 = np.nanmean(z * z)
    if not np.isfinite(c0) or c0 <= 0.0:
        return corr
    for g in range(1, omega + 1):
        if z.shape[1] <= g:
            break
        cg = np.nanmean(z[:, g:] * z[:, :-g])
        if np.isfinite(cg):
            corr[g] = np.clip(cg / c0, -0.99, 0.99)
    return corr


def decorrelate(z_window: np.ndarray, corr_band: np.ndarray, omega: int) -> np.ndarray:
    """Whiten a series against a banded stationary correlation.

    Builds the banded Toeplitz correlation from ``corr_band`` (r_0..r_omega),
    factorises it as L L^T, and applies L^{-1} by forward substitution.  If
    the band is not positive definite it is shrunk toward the identity by
    factors of 0.95 until the factorisation succeeds.
    """
    z = np.asarray(z_window, dtype=np.float64)
    n = z.shape[0]
    if omega == 0 or n == 0:
        return z.copy()
    band = np.asarray(corr_band, dtype=np.float64).copy()
    if band.shape[0] != omega + 1:
        raise ValueError("corr_band must have omega + 1 entries")
    kd = min(omega, n - 1)
    for _ in range(400):
        ab = np.zeros((kd + 1, n))
        for k in range(kd + 1):
            ab[k, : n - k] = band[k]
        try:
            lfac = cholesky_banded(ab, lower=True)
            return solve_banded((kd, 0), lfac, z)
        except np.linalg.LinAlgError:
            band[1:] *= 0.95
        except ValueError:
            band[1:] *= 0.95
    raise np.linalg.LinAlgError("banded correlation could not be made positive definite")


def bh_adjust(pvalues: np.ndarray, alpha: float) -> frozenset[int]:
    """Benjamini-Hochberg step-up: reject the k* smallest p-values where
    k* = max{k : p_(k) <= k * alpha / p}.  Returns 1-based ids."""
    pv = np.asarray(pvalues, dtype=np.float64)
    p = pv.shape[0]
    order = np.argsort(pv, kind="stable")
    ranked = pv[order]
    below = np.flatnonzero(ranked <= (np.arange(1, p + 1) * alpha / p))
    if below.size == 0:
        return frozenset()
    kstar = below[-1] + 1
    return frozenset(int(j) + 1 for j in order[:kstar])


def run_mwnt(z: np.ndarray, warmup_cols: int, cfg: MwntConfig):
    """Full MWNT pass over a (p, n) residual record.

    Estimates the banded temporal correlation on the warm-up columns, whitens
    each stream's full series once, scans the windowed statistics, and
    applies BH across streams at each time point.  Leading NaN columns
    (residuals not yet defined) are excluded.  Returns
    ``(rejected_per_t, pvalues)`` with one frozenset per time index.
    """
    z = np.asarray(z, dtype=np.float64)
    p, n_total = z.shape
    finite_cols = np.flatnonzero(np.all(np.isfinite(z), axis=0))
    rejected: list[frozenset[int]] = [frozenset()] * n_total
    if finite_cols.size == 0:
        return rejected, np.ones_like(z)
    j0 = int(finite_cols[0])

    corr = estimate_banded_correlation(z[:, j0:warmup_cols], cfg.omega)
    white = np.full_like(z, np.nan)
    for j in range(p):
        white[j, j0:] = decorrelate(z[j, j0:], corr, cfg.omega)

    _, pvals = mwnt_scan(white[:, j0:], cfg)
    full = np.ones((p, n_total))
    full[:, j0:] = pvals
    start = max(warmup_cols, j0 + cfg.window_n - 1)
    for t in range(start, n_total):
        rejected[t] = bh_adjust(full[:, t], cfg.alpha)
    return rejected, full
