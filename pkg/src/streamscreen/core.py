"""Shared value types and the exponential weighting scheme.

Everything downstream (per-stream trackers, fusion, screening) discounts
history with weights ``lambda ** (t_now - t_past)``.  The types here are
immutable so they can be shared freely across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimePoint",
    "Observation",
    "WeightSpec",
    "weight",
    "weight_mass_limit",
]


@dataclass(frozen=True, order=True)
class TimePoint:
    """One position on the observation grid.

    ``index`` is the primary key; ``time`` is a real timestamp in the same
    units as the smoothing parameter's exponent.  Spacing may be unequal but
    timestamps must strictly increase with index.
    """

    index: int
    time: float

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"index must be nonnegative, got {self.index}")
        if not math.isfinite(self.time):
            raise ValueError(f"time must be finite, got {self.time}")


@dataclass(frozen=True)
class Observation:
    """A single (stream, time, response, covariates) record."""

    stream_id: int
    t: TimePoint
    y: float
    x: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        if self.x.ndim != 1:
            raise ValueError("covariate vector must be one-dimensional")
        if not np.all(np.isfinite(self.x)) or not math.isfinite(self.y):
            raise ValueError("response and covariates must be finite")
        if self.stream_id < 1:
            raise ValueError(f"stream_id must be >= 1, got {self.stream_id}")

    @property
    def d(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class WeightSpec:
    """Smoothing parameter ``lam`` in (0, 1).

    ``neg_log_lambda`` is cached so weights can be evaluated as
    ``exp(-neg_log_lambda * gap)`` instead of repeated ``pow`` calls.
    ``half_life_scale`` is the bandwidth analogue ``-1 / log(lam)``.
    """

    lam: float
    neg_log_lambda: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        object.__setattr__(self, "neg_log_lambda", -math.log(self.lam))

    @property
    def half_life_scale(self) -> float:
        return 1.0 / self.neg_log_lambda


def weight(spec: WeightSpec, t_now: TimePoint, t_past: TimePoint) -> float:
    """Discount factor ``lam ** (t_now - t_past)`` applied to a past point.

    Raises ``ValueError`` if the time order is reversed.
    """
    gap = t_now.time - t_past.time
    if gap < 0.0:
        raise ValueError(
            f"reversed time order: t_past={t_past.time} is after t_now={t_now.time}"
        )
    return math.exp(-spec.neg_log_lambda * gap)


def weight_mass_limit(spec: WeightSpec, unit_gap: float) -> float:
    """Stationary total weight mass under equally spaced arrivals.

    With one observation every ``unit_gap`` time units the accumulated mass
    ``sum_i lam ** (t_m - t_i)`` converges to the geometric limit
    ``1 / (1 - lam ** unit_gap)``.
    """
    if unit_gap <= 0.0:
        raise ValueError(f"unit_gap must be positive, got {unit_gap}")
    return 1.0 / (1.0 - math.exp(-spec.neg_log_lambda * unit_gap))
