"""Robust cross-stream fusion of per-stream coefficient estimates.

A minority of streams may have drifted away from the shared coefficient, and
the drift can be one-sided.  Component-wise, the fused estimate is the
empirical quantile of the per-stream estimates at level
``1/2 - (pi_plus - pi_minus)/2`` where ``pi_plus - pi_minus`` is the
estimated imbalance between upward and downward drifters.  With no imbalance
this reduces to the component-wise median; with, say, 20% of streams drifted
upward the quantile level drops to 0.4, which lands on the median of the
clean streams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FusedState",
    "estimate_imbalance",
    "fuse_coefficient",
    "fuse_variance",
]


@dataclass(frozen=True)
class FusedState:
    """Fused coefficient/variance plus the quantile bookkeeping behind it."""

    beta_tilde: np.ndarray       # (d,)
    sigma2_tilde: float
    quantile_levels: np.ndarray  # (d,), each in [0, 1]
    imbalance: np.ndarray        # (d,), estimated pi_plus - pi_minus


def estimate_imbalance(estimates_r: np.ndarray, prev_beta_r: float) -> float:
    """Signed fraction of streams above vs below the previous fused value.

    Ties at exactly ``prev_beta_r`` count in neither direction.  The result
    lies in [-1, 1].
    """
    est = np.asarray(estimates_r, dtype=np.float64)
    p = est.shape[0]
    if p < 1:
        raise ValueError("need at least one stream")
    n_above = int(np.count_nonzero(est > prev_beta_r))
    n_below = int(np.count_nonzero(est < prev_beta_r))
    return (n_above - n_below) / p


def _quantile_ranks(estimates: np.ndarray, prev_beta: np.ndarray | None):
    """Order-statistic rank (1-based) per component, by integer arithmetic.

    With counts ``a`` above and ``b`` below the previous fused value the
    quantile level is ``q = (p - a + b) / (2p)`` and the left-continuous
    empirical inverse picks order statistic ``ceil(q * p) = ceil((p-a+b)/2)``,
    clamped to at least 1 when the level is nonpositive.
    """
    p, d = estimates.shape
    if prev_beta is None:
        num = np.full(d, p, dtype=np.int64)  # median rule at the first fusion
    else:
        n_above = np.count_nonzero(estimates > prev_beta[None, :], axis=0)
        n_below = np.count_nonzero(estimates < prev_beta[None, :], axis=0)
        num = p - n_above + n_below
    ranks = np.clip((num + 1) // 2, 1, p)
    return ranks, num


def fuse_coefficient(estimates: np.ndarray, prev_beta: np.ndarray | None) -> FusedState:
    """Quantile-fuse a (p, d) matrix of per-stream estimates, column-wise.

    ``prev_beta`` is the fused value from the previous time point, used to
    estimate the drift-sign imbalance; pass ``None`` at the very first fusion
    to fall back on the component-wise median.  The quantile is evaluated as
    the left-continuous inverse on the order statistics, no interpolation.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.ndim != 2 or estimates.shape[0] < 1:
        raise ValueError("estimates must be a (p, d) matrix with p >= 1")
    p, d = estimates.shape
    ranks, num = _quantile_ranks(estimates, prev_beta)
    ordered = np.sort(estimates, axis=0)
    beta_tilde = ordered[ranks - 1, np.arange(d)]
    imbalance = (p - num) / p  # == (n_above - n_below) / p
    levels = 0.5 - 0.5 * imbalance
    return FusedState(
        beta_tilde=beta_tilde,
        sigma2_tilde=0.0,
        quantile_levels=levels,
        imbalance=imbalance,
    )


def fuse_variance(sigma2_hats: np.ndarray) -> float:
    """Pooled variance estimate: plain average over streams."""
    s = np.asarray(sigma2_hats, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("variance estimates must be nonnegative")
    return float(np.mean(s))
