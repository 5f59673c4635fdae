"""Smoothing-parameter grid, one-step prediction error, and the trimmed set.

The smoothing parameter is re-selected at every time point by minimising the
averaged one-step-ahead squared prediction error over a trimmed set of
trusted streams, so the effective bandwidth adapts to the local curvature of
the shared coefficient path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TimePoint, WeightSpec

__all__ = [
    "LambdaGrid",
    "TrimmedSet",
    "build_grid",
    "apse_hat",
    "select_lambda",
    "update_trimmed_set",
]


@dataclass(frozen=True)
class LambdaGrid:
    """Candidate smoothing parameters, ordered by decreasing lambda.

    ``labels`` carries the grid constants C_l so outputs can report the
    scale-free label alongside the realised lambda.
    """

    values: tuple[WeightSpec, ...]
    labels: tuple[float, ...]

    def __post_init__(self) -> None:
        lams = [s.lam for s in self.values]
        if len(lams) < 1:
            raise ValueError("grid must contain at least one value")
        if any(not (0.0 < v < 1.0) for v in lams):
            raise ValueError("grid values must lie in (0, 1)")
        if any(a <= b for a, b in zip(lams, lams[1:])):
            raise ValueError("grid values must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.values)

    def label_str(self, idx: int) -> str:
        return f"C{self.labels[idx]:.2f}"


@dataclass(frozen=True)
class TrimmedSet:
    """The half of streams currently trusted for bandwidth selection."""

    members: frozenset[int]
    source_time: TimePoint | None


def build_grid(n_hint: int) -> LambdaGrid:
    """Ten-point grid ``lam_l = exp(-C_l * n_hint**-0.3)``, C_l = 0.10 + l/10.

    ``n_hint`` is the anticipated total number of time points; larger grids
    concentrate the candidates closer to 1.
    """
    if n_hint < 2:
        raise ValueError("n_hint must be at least 2")
    labels = tuple(0.10 + l / 10.0 for l in range(1, 11))
    scale = float(n_hint) ** -0.3
    values = tuple(WeightSpec(float(np.exp(-c * scale))) for c in labels)
    return LambdaGrid(values=values, labels=labels)


def apse_hat(
    prev_beta: np.ndarray,
    ids: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    trimmed: TrimmedSet,
) -> float:
    """Mean squared one-step prediction error over the trimmed set.

    Predictions use the fused coefficient from the previous time point;
    trimmed streams missing from the batch are skipped and the divisor
    reduced.  Returns ``nan`` when no trimmed stream is present.
    """
    if not trimmed.members:
        raise ValueError("trimmed set is empty")
    ids = np.asarray(ids)
    mask = np.isin(ids, np.fromiter(trimmed.members, dtype=ids.dtype))
    if not np.any(mask):
        return float("nan")
    resid = y[mask] - x[mask] @ np.asarray(prev_beta, dtype=np.float64)
    return float(np.mean(resid**2))


def select_lambda(apse_values: np.ndarray, grid: LambdaGrid) -> tuple[int, WeightSpec]:
    """Index and spec of the grid point minimising the prediction error.

    Non-finite entries are excluded; ties break toward the larger lambda
    (heavier smoothing), which is the earlier grid position.  Raises
    ``ValueError`` when every candidate is excluded.
    """
    vals = np.asarray(apse_values, dtype=np.float64)
    if vals.shape[0] != len(grid):
        raise ValueError("one APSE value per grid point required")
    finite = np.isfinite(vals)
    if not np.any(finite):
        raise ValueError("no admissible lambda")
    masked = np.where(finite, vals, np.inf)
    idx = int(np.argmin(masked))  # argmin takes the first minimum: larger lambda
    return idx, grid.values[idx]


def update_trimmed_set(gamma_abs: np.ndarray, source_time: TimePoint | None = None) -> TrimmedSet:
    """Keep the floor(p/2) streams with the smallest screening magnitudes.

    Stream ids are positional (entry j is stream j+1).  Ties at the cutoff
    break toward the smaller stream id via the stable sort.
    """
    g = np.asarray(gamma_abs, dtype=np.float64)
    p = g.shape[0]
    if p < 2:
        raise ValueError("need at least two streams to trim")
    keep = p // 2
    order = np.argsort(g, kind="stable")
    members = frozenset(int(j) + 1 for j in order[:keep])
    return TrimmedSet(members=members, source_time=source_time)
