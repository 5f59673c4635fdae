"""Per-stream recursive weighted least squares with no stored history.

For each stream the state is the weighted Gram matrix ``A``, the current
coefficient, the running residual-variance estimate and the accumulated
weight mass ``phi``.  One update costs O(d^2) memory and O(d^3) time and is
exactly equivalent to refitting the exponentially weighted loss on the full
absorbed history (the batch-equivalence tests pin this down).

``ewls_solve`` / ``ewls_advance`` operate on arrays with arbitrary leading
batch dimensions; the engine calls them on stacked (grid, stream) banks while
:class:`StreamTrackerState` wraps the single-stream case.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Observation, TimePoint, WeightSpec

__all__ = [
    "StreamTrackerState",
    "fresh_state",
    "update_coefficient",
    "update_variance",
    "update",
    "predict",
    "ewls_solve",
    "ewls_step",
]

RIDGE_EPS = 1e-8
COND_MAX = 1e10


def ewls_solve(gram: np.ndarray, rhs: np.ndarray, n_eff: np.ndarray):
    """Solve ``gram @ beta = rhs`` for stacked symmetric systems.

    Systems that are still warming (fewer absorbed points than dimensions, or
    condition number above ``COND_MAX``) are solved on the ridge-stabilised
    matrix ``gram + RIDGE_EPS * (trace/d) * I`` instead.

    Returns ``(beta, warming)`` where ``warming`` is a boolean array over the
    batch dimensions.
    """
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    d = gram.shape[-1]

    ev = np.linalg.eigvalsh(gram)
    ev_min, ev_max = ev[..., 0], ev[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(ev_min > 0.0, ev_max / np.where(ev_min > 0.0, ev_min, 1.0), np.inf)
    warming = (np.asarray(n_eff) < d) | (cond > COND_MAX)

    trace = np.einsum("...ii->...", gram)
    ridge = np.where(warming, RIDGE_EPS * np.maximum(trace / d, 1.0), 0.0)
    stab = gram + ridge[..., None, None] * np.eye(d)
    beta = np.linalg.solve(stab, rhs[..., None])[..., 0]
    return beta, warming


def ewls_step(gram, beta, sigma2, phi, n_seen, x, y, w):
    """Advance stacked tracker states by one observation each.

    Implements the recursions

    * ``A_new = w * A + x x^T``
    * ``beta_new = A_new^{-1} (w * A @ beta + x * y)``
    * ``phi_new = w * phi + 1``
    * ``sigma2_new = ((phi_new - 1) * sigma2 + e^2) / phi_new``

    with ``e = y - x . beta_new`` computed once at absorption time.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)

    rhs = w[..., None] * np.einsum("...ij,...j->...i", gram, beta) + x * y[..., None]
    gram_new = w[..., None, None] * gram + x[..., :, None] * x[..., None, :]
    beta_new, warming = ewls_solve(gram_new, rhs, np.asarray(n_seen) + 1)

    resid = y - np.einsum("...i,...i->...", x, beta_new)
    phi_new = w * phi + 1.0
    sigma2_new = ((phi_new - 1.0) * sigma2 + resid**2) / phi_new
    return gram_new, beta_new, sigma2_new, phi_new, resid, warming


# ---------------------------------------------------------------------------
# Single-stream functional interface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StreamTrackerState:
    """Bounded summary of one stream under one smoothing parameter.

    Attributes:
        gram: weighted Gram matrix ``A`` (d x d, symmetric PSD).
        beta_hat: current coefficient estimate.
        sigma2_hat: running weighted mean of squared absorption-time residuals.
        phi: accumulated weight mass ``sum_i lam**(t_m - t_i)``.
        last_t: grid point of the last absorbed observation.
        n_seen: number of observations absorbed.
        warming: True while the solve needed ridge stabilisation.
        last_resid: residual of the last absorbed observation at its own
            absorption-time coefficient (input to `update_variance`).
    """

    gram: np.ndarray
    beta_hat: np.ndarray
    sigma2_hat: float
    phi: float
    last_t: TimePoint | None
    n_seen: int
    warming: bool = True
    last_resid: float = 0.0


def fresh_state(d: int) -> StreamTrackerState:
    return StreamTrackerState(
        gram=np.zeros((d, d)),
        beta_hat=np.zeros(d),
        sigma2_hat=0.0,
        phi=0.0,
        last_t=None,
        n_seen=0,
    )


def _gap_weight(state: StreamTrackerState, obs: Observation, spec: WeightSpec) -> float:
    if state.last_t is None:
        return 1.0  # no prior mass, value is irrelevant
    if obs.t.time <= state.last_t.time:
        raise ValueError(
            f"observation at t={obs.t.time} is not later than state clock {state.last_t.time}"
        )
    return np.exp(-spec.neg_log_lambda * (obs.t.time - state.last_t.time))


def update_coefficient(
    state: StreamTrackerState, obs: Observation, spec: WeightSpec
) -> StreamTrackerState:
    """Absorb one observation into the Gram matrix and coefficient.

    The returned coefficient minimises the exponentially weighted squared
    loss over the entire absorbed history.  The residual at the updated
    coefficient is stashed on the state for the follow-up variance update.
    """
    if obs.x.shape != state.beta_hat.shape:
        raise ValueError(
            f"covariate dimension {obs.x.shape[0]} != state dimension {state.beta_hat.shape[0]}"
        )
    w = _gap_weight(state, obs, spec)
    gram, beta, _, phi, resid, warming = ewls_step(
        state.gram, state.beta_hat, state.sigma2_hat, state.phi,
        state.n_seen, obs.x, obs.y, w,
    )
    return replace(
        state,
        gram=gram,
        beta_hat=beta,
        phi=float(phi),
        last_t=obs.t,
        n_seen=state.n_seen + 1,
        warming=bool(warming),
        last_resid=float(resid),
    )


def update_variance(state: StreamTrackerState, obs: Observation, spec: WeightSpec) -> StreamTrackerState:
    """Fold the absorption-time residual of ``obs`` into ``sigma2_hat``.

    Must run after `update_coefficient` for the same observation: the
    residual uses the just-updated coefficient and is never recomputed when
    the coefficient later moves.  ``w * phi_prev`` is recovered as
    ``phi - 1`` from the already-advanced mass.
    """
    if state.last_t is None or state.last_t.index != obs.t.index:
        raise ValueError("update_variance requires update_coefficient for the same observation first")
    phi = state.phi
    sigma2 = ((phi - 1.0) * state.sigma2_hat + state.last_resid**2) / phi
    return replace(state, sigma2_hat=float(sigma2))


def update(state: StreamTrackerState, obs: Observation, spec: WeightSpec) -> StreamTrackerState:
    """Coefficient then variance update for one observation."""
    return update_variance(update_coefficient(state, obs, spec), obs, spec)


def predict(state: StreamTrackerState, x: np.ndarray) -> float:
    """Linear prediction ``x . beta_hat``.

    Check ``state.warming`` before trusting the value: predictions from a
    warming state are returned but are not reliable.
    """
    if state.n_seen < 1:
        raise ValueError("state has absorbed no observations")
    return float(np.dot(np.asarray(x, dtype=np.float64), state.beta_hat))
