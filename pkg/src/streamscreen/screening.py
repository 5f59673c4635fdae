"""Screening statistics and the FDR-controlling data-driven threshold.

Each stream carries an exponentially weighted running mean of its normalized
residuals.  A stream is flagged when the magnitude of that mean exceeds a
threshold chosen so that the count of warm-up (null) statistics above the
cutoff, relative to the count of current statistics above it, stays below the
target rate.  No p-values and no long-run variance estimates are involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import TimePoint

__all__ = [
    "ScreenState",
    "ScreeningDecision",
    "normalized_residual",
    "update_gamma",
    "freeze_nulls",
    "threshold_and_reject",
]

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class ScreenState:
    """Running screening statistic for one stream under one lambda.

    ``null_gamma`` is the magnitude frozen at the end of the warm-up window;
    once set it never changes.
    """

    gamma_hat: float = 0.0
    phi: float = 0.0
    null_gamma: float | None = None


@dataclass(frozen=True)
class ScreeningDecision:
    """Outcome of one thresholding pass at one time point."""

    t: TimePoint
    threshold: float            # +inf means "no rejections"
    rejected: frozenset[int]    # 1-based stream ids
    stats: np.ndarray           # |gamma_hat| per stream
    alpha: float


def normalized_residual(y: float, fitted: float, sigma2_tilde: float) -> float:
    """Residual standardised by the fused variance: ``(y - fitted) / sigma``."""
    if sigma2_tilde <= VARIANCE_FLOOR:
        raise ValueError(f"degenerate variance: sigma2_tilde={sigma2_tilde}")
    return (y - fitted) / math.sqrt(sigma2_tilde)


def update_gamma(state: ScreenState, z_tilde: float, w: float) -> ScreenState:
    """Fold one normalized residual into the running weighted mean.

    ``w`` is the decay over the gap since the previous absorption.  The
    recursion keeps ``gamma_hat`` equal to the full weighted mean of all
    absorbed residuals, each frozen at the value it had when computed.
    """
    if not (0.0 < w <= 1.0):
        raise ValueError(f"weight must lie in (0, 1], got {w}")
    if not math.isfinite(z_tilde):
        raise ValueError("normalized residual must be finite")
    phi_new = w * state.phi + 1.0
    gamma_new = (w * state.phi * state.gamma_hat + z_tilde) / phi_new
    return replace(state, gamma_hat=gamma_new, phi=phi_new)


def freeze_nulls(states: list[ScreenState], t_star: TimePoint) -> list[ScreenState]:
    """Snapshot every stream's |gamma_hat| as its null reference statistic.

    Single-shot: refreezing an already-frozen collection is an error.
    """
    if any(s.null_gamma is not None for s in states):
        raise ValueError("null statistics already frozen")
    del t_star  # the caller's clock; recorded by the engine, not the states
    return [replace(s, null_gamma=abs(s.gamma_hat)) for s in states]


def threshold_and_reject(
    current_abs: np.ndarray,
    null_abs: np.ndarray,
    alpha: float,
    t: TimePoint | None = None,
) -> ScreeningDecision:
    """Smallest cutoff at which null exceedances / current exceedances <= alpha.

    Candidates are the union of both statistic vectors plus a sentinel above
    the maximum; the ratio is a step function that only changes at these
    points, so scanning them is exact.  Streams with current statistic >=
    the chosen threshold are rejected (ties reject).
    """
    cur = np.asarray(current_abs, dtype=np.float64)
    nul = np.asarray(null_abs, dtype=np.float64)
    if cur.shape != nul.shape:
        raise ValueError("current and null statistic vectors must have equal length")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")

    top = max(cur.max(initial=0.0), nul.max(initial=0.0))
    candidates = np.unique(np.concatenate([nul, cur, [top + 1.0]]))
    nul_sorted = np.sort(nul)
    cur_sorted = np.sort(cur)
    p = cur.shape[0]
    n_null = p - np.searchsorted(nul_sorted, candidates, side="left")
    n_cur = p - np.searchsorted(cur_sorted, candidates, side="left")
    ratio = n_null / np.maximum(n_cur, 1)

    ok = np.flatnonzero(ratio <= alpha)
    if ok.size == 0:
        threshold = math.inf
    else:
        threshold = float(candidates[ok[0]])
        if threshold > cur.max(initial=-math.inf):
            threshold = math.inf  # nothing rejected; normalise the report
    rejected = frozenset(int(j) + 1 for j in np.flatnonzero(cur >= threshold))
    return ScreeningDecision(
        t=t if t is not None else TimePoint(0, 0.0),
        threshold=threshold,
        rejected=rejected,
        stats=cur,
        alpha=alpha,
    )
