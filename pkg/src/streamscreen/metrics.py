"""Evaluation of decision and estimate logs against ground truth.

Covers the false discovery proportion per time point, true positive rates,
detection delays (capped at the period length when a signal is missed), and
the root-mean-squared estimation error.  Detection delays and per-period
TPRs are aggregated as medians over all signal periods within a replication;
cross-replication aggregation is left to the harness.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .simulator import GroundTruth, SignalPeriod

__all__ = [
    "RunLog",
    "MetricReport",
    "fdp_at",
    "tpr_at",
    "detection_delay",
    "period_tpr",
    "rmse",
    "fdp_series",
    "detection_summary",
    "evaluate",
]


@dataclass
class RunLog:
    """Per-time-point output of one method over one run."""

    method: str
    times: np.ndarray                 # (n,) strictly increasing
    labels: list[str]                 # selected smoothing label per time point
    beta_tilde: np.ndarray            # (n, d)
    sigma2_tilde: np.ndarray          # (n,)
    thresholds: np.ndarray            # (n,), NaN while no decision is emitted
    rejected: list[frozenset[int]]    # (n,) sets of 1-based stream ids

    def __post_init__(self) -> None:
        n = self.times.shape[0]
        if not (len(self.labels) == self.beta_tilde.shape[0] == len(self.rejected) == n):
            raise ValueError("run log fields must be aligned with the time grid")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time points must strictly increase")


@dataclass
class MetricReport:
    """Summary for one run; rates in [0, 1], delays at least 1."""

    method: str
    fdr_mean: float
    fdp_signal_mean: float            # FDP averaged over signal-period time points
    rejection_rate_mean: float        # |rejected| / p averaged over decision points
    tpr_median: float
    delay_median: float
    rmse_full: float
    rmse_post_warmup: float
    n_periods: int
    extras: dict = field(default_factory=dict)


def fdp_at(rejected: frozenset[int] | set[int], truth_o_t: frozenset[int] | set[int]) -> float:
    """False discoveries over total discoveries, guarded denominator."""
    if not rejected:
        return 0.0
    return len(set(rejected) - set(truth_o_t)) / max(len(rejected), 1)


def tpr_at(rejected: frozenset[int] | set[int], truth_o_t: frozenset[int] | set[int]) -> float:
    """Flagged fraction of the currently irregular streams."""
    truth = set(truth_o_t)
    if not truth:
        raise ValueError("TPR undefined with empty truth set")
    return len(set(rejected) & truth) / len(truth)


def _period_indices(times: np.ndarray, start: float, end: float) -> np.ndarray:
    return np.flatnonzero((times >= start) & (times <= end))


def detection_delay(
    rejected: list[frozenset[int]], times: np.ndarray, period: tuple[float, float], stream: int
) -> int:
    """Steps from period onset to the first flag of the stream.

    A miss counts as the full period length.
    """
    start, end = period
    if start > end:
        raise ValueError("period start must not exceed its end")
    idx = _period_indices(times, start, end)
    for rank, i in enumerate(idx, start=1):
        if stream in rejected[i]:
            return rank
    return len(idx)


def period_tpr(
    rejected: list[frozenset[int]], times: np.ndarray, period: tuple[float, float], stream: int
) -> float:
    """Fraction of the period's time points at which the stream is flagged."""
    idx = _period_indices(times, period[0], period[1])
    if idx.size == 0:
        raise ValueError("period contains no time points")
    hits = sum(1 for i in idx if stream in rejected[i])
    return hits / idx.size


def rmse(estimates: np.ndarray, truth: np.ndarray) -> float:
    """Root of the time-averaged squared Euclidean error."""
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape:
        raise ValueError(f"series length mismatch: {est.shape} vs {tru.shape}")
    return float(np.sqrt(np.mean(np.sum((est - tru) ** 2, axis=-1))))


def fdp_series(log: RunLog, truth: GroundTruth) -> np.ndarray:
    """FDP at each time point (0 where nothing is rejected)."""
    return np.array(
        [fdp_at(log.rejected[i], truth.o_sets[i]) for i in range(len(log.rejected))]
    )


def detection_summary(
    log: RunLog,
    periods: list[SignalPeriod],
    streams: set[int] | None = None,
) -> tuple[float, float, int]:
    """Median per-period TPR and delay over the given signal periods.

    ``streams`` optionally restricts to a subset (e.g. only strong signals).
    Returns (median_tpr, median_delay, n_periods); NaNs when no period
    qualifies.
    """
    tprs: list[float] = []
    delays: list[float] = []
    for pr in periods:
        if streams is not None and pr.stream_id not in streams:
            continue
        tprs.append(period_tpr(log.rejected, log.times, (pr.start, pr.end), pr.stream_id))
        delays.append(detection_delay(log.rejected, log.times, (pr.start, pr.end), pr.stream_id))
    if not tprs:
        return float("nan"), float("nan"), 0
    return statistics.median(tprs), statistics.median(delays), len(tprs)


def evaluate(
    log: RunLog,
    truth: GroundTruth,
    warmup: int,
    estimates: np.ndarray | None = None,
) -> MetricReport:
    """Standard per-run evaluation against the generated ground truth.

    ``estimates`` defaults to the log's fused coefficients; pass an
    alternative (n, d) series to score a different estimator on the same run.
    The RMSE is reported both over the full grid and excluding the warm-up.
    """
    est = log.beta_tilde if estimates is None else np.asarray(estimates)
    n = truth.n
    fdp = fdp_series(log, truth)
    decision_idx = np.flatnonzero(log.times > warmup)
    signal_idx = np.array(
        [i for i in range(n) if truth.o_sets[i] and log.times[i] > warmup], dtype=int
    )
    rej_sizes = np.array([len(log.rejected[i]) for i in range(n)])

    tpr_med, delay_med, n_periods = detection_summary(log, truth.periods)
    post = log.times > warmup
    return MetricReport(
        method=log.method,
        fdr_mean=float(fdp[decision_idx].mean()) if decision_idx.size else 0.0,
        fdp_signal_mean=float(fdp[signal_idx].mean()) if signal_idx.size else 0.0,
        rejection_rate_mean=(
            float((rej_sizes[decision_idx] / truth.p).mean()) if decision_idx.size else 0.0
        ),
        tpr_median=tpr_med,
        delay_median=delay_med,
        rmse_full=rmse(est, truth.beta),
        rmse_post_warmup=rmse(est[post], truth.beta[post]),
        n_periods=n_periods,
    )
