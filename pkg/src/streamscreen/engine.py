"""Streaming engine: one pass per arriving time point, bounded state.

Per step, in order:

1. select the smoothing parameter by one-step prediction error over the
   trimmed set, using each grid pipeline's fused coefficient from the
   previous time point (so selection never sees the incoming batch's effect
   on the trackers);
2. absorb the batch into every pipeline's per-stream trackers;
3. fuse coefficients and pool variances per pipeline;
4. update every pipeline's screening statistics from the fresh residuals;
5. after the warm-up, threshold the selected pipeline's statistics against
   its frozen warm-up nulls and emit the rejection set;
6. refresh the trimmed set from the selected pipeline's statistics.

State is O(grid * streams * d^2) regardless of how many points have been
absorbed, and a checkpoint restores it exactly (resumed runs are
bit-identical to uninterrupted ones).
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .bandwidth import LambdaGrid, TrimmedSet, build_grid, select_lambda, update_trimmed_set
from .core import TimePoint, WeightSpec
from .screening import VARIANCE_FLOOR, ScreeningDecision, threshold_and_reject
from .tracker import ewls_solve, ewls_step

__all__ = ["EngineConfig", "StepRecord", "Engine", "run"]

CHECKPOINT_FORMAT = 1

_METHODS = ("dts", "dts-pooled", "mean")


@dataclass(frozen=True)
class EngineConfig:
    """Run-level configuration shared by the CLI and the service."""

    p: int
    d: int = 2
    alpha: float = 0.1
    warmup: int = 300
    n_hint: int = 2400
    method: str = "dts"
    fixed_label: float = 0.3   # grid label whose pipeline feeds recorded baselines
    record_z: bool = False     # keep the fixed pipeline's residual history (for MWNT)
    record_fixed: bool = False  # keep pooled/mean trajectories at the fixed label

    def __post_init__(self) -> None:
        if self.p < 2:
            raise ValueError("need at least two streams")
        if self.d < 1:
            raise ValueError("d must be positive")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.warmup < 1:
            raise ValueError("warmup must be at least 1")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")


@dataclass(frozen=True)
class StepRecord:
    """One output line: fused estimate and screening decision at one point."""

    t: TimePoint
    label: str
    beta_tilde: np.ndarray
    sigma2_tilde: float
    threshold: float | None        # None during warm-up, inf for "no rejections"
    rejected: frozenset[int]


class Engine:
    """Mutable engine state over a lambda grid of per-stream pipelines.

    Arrays are stacked as (q, p, ...) so a step is a handful of vectorised
    operations; q is the grid size and p the stream count.
    """

    def __init__(self, config: EngineConfig, grid: LambdaGrid | None = None):
        self.config = config
        self.grid = grid if grid is not None else build_grid(config.n_hint)
        q, p, d = len(self.grid), config.p, config.d
        self.nll = np.array([s.neg_log_lambda for s in self.grid.values])

        # tracker banks
        self.gram = np.zeros((q, p, d, d))
        self.beta = np.zeros((q, p, d))
        self.sigma2 = np.zeros((q, p))
        self.phi = np.zeros((q, p))
        self.warming = np.ones((q, p), dtype=bool)
        self.n_seen = np.zeros(p, dtype=np.int64)
        self.last_time = np.full(p, np.nan)

        # screening banks
        self.gamma = np.zeros((q, p))
        self.phi_s = np.zeros((q, p))
        self.last_time_s = np.full((q, p), np.nan)
        self.null_gamma = np.zeros((q, p))
        self.nulls_frozen = False

        # pooled bank (always maintained; one Gram per pipeline is cheap)
        self.gram_pool = np.zeros((q, d, d))
        self.rhs_pool = np.zeros((q, d))
        self.phi_pool = np.zeros(q)

        # fusion state
        self.fused_prev: np.ndarray | None = None   # (q, d) from the previous step
        self.sigma2_tilde = np.zeros(q)
        self.trimmed: TrimmedSet = update_trimmed_set(np.zeros(p))
        self.sel_idx = 0

        self.m = 0
        self.clock = -math.inf

        try:
            self.fixed_idx = int(np.argmin(np.abs(np.asarray(self.grid.labels) - config.fixed_label)))
        except ValueError:
            self.fixed_idx = 0
        self.z_history: list[np.ndarray] = []
        self.pooled_history: list[np.ndarray] = []
        self.mean_history: list[np.ndarray] = []

    # -- helpers ----------------------------------------------------------

    @property
    def q(self) -> int:
        return len(self.grid)

    def _gap_weights(self, t: float, last: np.ndarray) -> np.ndarray:
        """Decay factors per (pipeline, stream-in-batch) since last absorption."""
        gaps = t - last
        w = np.exp(-self.nll[:, None] * gaps[None, :]) if last.ndim == 1 else np.exp(-self.nll[:, None] * gaps)
        return np.where(np.isnan(gaps), 1.0, w)

    def _select(self, idx: np.ndarray, x: np.ndarray, y: np.ndarray) -> int:
        if self.fused_prev is None:
            return 0  # largest lambda until a fused estimate exists
        member_mask = np.isin(idx + 1, np.fromiter(self.trimmed.members, dtype=np.int64))
        if not member_mask.any():
            return self.sel_idx  # batch carries no trusted stream; keep the last choice
        pred = x[member_mask] @ self.fused_prev.T          # (k', q)
        err = (y[member_mask, None] - pred) ** 2
        apse = err.mean(axis=0)
        try:
            sel, _ = select_lambda(apse, self.grid)
        except ValueError:
            return self.sel_idx
        return sel

    # -- the step ---------------------------------------------------------

    def step(self, t: float, ids: np.ndarray, x: np.ndarray, y: np.ndarray) -> StepRecord:
        """Advance the engine by one time point.

        ``ids`` are 1-based stream ids present in the batch; ``x`` is (k, d)
        and ``y`` (k,).  Raises ``ValueError`` on out-of-order batches or
        shape mismatches.
        """
        cfg = self.config
        ids = np.asarray(ids, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if t <= self.clock:
            raise ValueError(f"batch time {t} does not advance the clock {self.clock}")
        if ids.size == 0:
            raise ValueError("empty batch")
        if x.ndim != 2 or x.shape[1] != cfg.d:
            raise ValueError(f"covariates must be (k, {cfg.d}), got {x.shape}")
        if ids.min() < 1 or ids.max() > cfg.p:
            raise ValueError("stream ids out of range")
        if np.unique(ids).size != ids.size:
            raise ValueError("duplicate stream ids in one batch")
        idx = ids - 1

        # (1) smoothing parameter for this time point
        sel = self._select(idx, x, y)

        # (2) tracker updates for every pipeline
        w = self._gap_weights(t, self.last_time[idx])               # (q, k)
        gram_new, beta_new, sig2_new, phi_new, resid, warming = ewls_step(
            self.gram[:, idx], self.beta[:, idx], self.sigma2[:, idx],
            self.phi[:, idx], self.n_seen[idx], x[None, :, :], y[None, :], w,
        )
        self.gram[:, idx] = gram_new
        self.beta[:, idx] = beta_new
        self.sigma2[:, idx] = sig2_new
        self.phi[:, idx] = phi_new
        self.warming[:, idx] = warming
        self.n_seen[idx] += 1
        self.last_time[idx] = t

        # pooled bank shares the batch clock
        w_pool = np.exp(-self.nll * (t - self.clock)) if np.isfinite(self.clock) else np.ones(self.q)
        self.gram_pool = w_pool[:, None, None] * self.gram_pool + (x.T @ x)[None, :, :]
        self.rhs_pool = w_pool[:, None] * self.rhs_pool + (x.T @ y)[None, :]
        self.phi_pool = w_pool * self.phi_pool + ids.size

        # (3) fusion per pipeline
        prev = self.fused_prev
        if cfg.method == "dts":
            fused = np.empty((self.q, cfg.d))
            for k in range(self.q):
                fused[k] = fusion.fuse_coefficient(
                    self.beta[k], None if prev is None else prev[k]
                ).beta_tilde
        elif cfg.method == "mean":
            fused = self.beta.mean(axis=1)
        else:  # dts-pooled
            fused, _ = ewls_solve(self.gram_pool, self.rhs_pool, self.n_seen.sum())
        self.sigma2_tilde = self.sigma2.mean(axis=1)
        self.fused_prev = fused

        # (4) screening updates where the pooled variance is usable
        live = self.sigma2_tilde > VARIANCE_FLOOR                    # (q,)
        if live.any():
            with np.errstate(invalid="ignore", divide="ignore"):
                z = (y[None, :] - np.einsum("kd,qd->qk", x, fused)) / np.sqrt(
                    self.sigma2_tilde
                )[:, None]
            w_s = self._gap_weights(t, self.last_time_s[:, idx])
            phi_s_new = w_s * self.phi_s[:, idx] + 1.0
            gamma_new = (w_s * self.phi_s[:, idx] * self.gamma[:, idx] + z) / phi_s_new
            self.gamma[:, idx] = np.where(live[:, None], gamma_new, self.gamma[:, idx])
            self.phi_s[:, idx] = np.where(live[:, None], phi_s_new, self.phi_s[:, idx])
            self.last_time_s[:, idx] = np.where(live[:, None], t, self.last_time_s[:, idx])

        self.m += 1
        self.clock = t

        # freeze the warm-up nulls exactly once, at the warm-up's last point
        if self.m == cfg.warmup and not self.nulls_frozen:
            self.null_gamma = np.abs(self.gamma)
            self.nulls_frozen = True

        # (5) decision from the selected pipeline, post warm-up only
        decision: ScreeningDecision | None = None
        if self.nulls_frozen and self.m > cfg.warmup:
            decision = threshold_and_reject(
                np.abs(self.gamma[sel]), self.null_gamma[sel], cfg.alpha,
                TimePoint(self.m - 1, t),
            )

        # (6) trimmed set for the next step, from the selected pipeline
        self.trimmed = update_trimmed_set(np.abs(self.gamma[sel]), TimePoint(self.m - 1, t))
        self.sel_idx = sel

        if cfg.record_z:
            zrow = np.full(cfg.p, np.nan)
            if live[self.fixed_idx]:
                zrow[idx] = z[self.fixed_idx]
            self.z_history.append(zrow)
        if cfg.record_fixed:
            pooled_beta, _ = ewls_solve(
                self.gram_pool[self.fixed_idx], self.rhs_pool[self.fixed_idx], self.n_seen.sum()
            )
            self.pooled_history.append(pooled_beta)
            self.mean_history.append(self.beta[self.fixed_idx].mean(axis=0))

        return StepRecord(
            t=TimePoint(self.m - 1, t),
            label=self.grid.label_str(sel),
            beta_tilde=fused[sel].copy(),
            sigma2_tilde=float(self.sigma2_tilde[sel]),
            threshold=None if decision is None else decision.threshold,
            rejected=frozenset() if decision is None else decision.rejected,
        )

    # -- checkpointing ------------------------------------------------------

    def checkpoint_bytes(self) -> bytes:
        """Serialise the full state; restoring reproduces the run exactly."""
        header = {
            "format": CHECKPOINT_FORMAT,
            "config": {
                "p": self.config.p, "d": self.config.d, "alpha": self.config.alpha,
                "warmup": self.config.warmup, "n_hint": self.config.n_hint,
                "method": self.config.method, "fixed_label": self.config.fixed_label,
                "record_z": self.config.record_z, "record_fixed": self.config.record_fixed,
            },
            "labels": list(self.grid.labels),
            "lambdas": [s.lam for s in self.grid.values],
            "m": self.m,
            "clock": self.clock,
            "sel_idx": self.sel_idx,
            "nulls_frozen": self.nulls_frozen,
            "trimmed": sorted(self.trimmed.members),
            "trimmed_time": None if self.trimmed.source_time is None
            else [self.trimmed.source_time.index, self.trimmed.source_time.time],
            "has_fused_prev": self.fused_prev is not None,
        }
        buf = io.BytesIO()
        np.savez(
            buf,
            header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
            gram=self.gram, beta=self.beta, sigma2=self.sigma2, phi=self.phi,
            warming=self.warming, n_seen=self.n_seen, last_time=self.last_time,
            gamma=self.gamma, phi_s=self.phi_s, last_time_s=self.last_time_s,
            null_gamma=self.null_gamma,
            gram_pool=self.gram_pool, rhs_pool=self.rhs_pool, phi_pool=self.phi_pool,
            fused_prev=self.fused_prev if self.fused_prev is not None else np.zeros(0),
            sigma2_tilde=self.sigma2_tilde,
        )
        return buf.getvalue()

    def save_checkpoint(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.checkpoint_bytes())

    @classmethod
    def from_checkpoint_bytes(cls, blob: bytes) -> "Engine":
        with np.load(io.BytesIO(blob)) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header["format"] != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format {header['format']}")
            cfg = EngineConfig(**header["config"])
            grid = LambdaGrid(
                values=tuple(WeightSpec(v) for v in header["lambdas"]),
                labels=tuple(header["labels"]),
            )
            eng = cls(cfg, grid)
            for name in (
                "gram", "beta", "sigma2", "phi", "warming", "n_seen", "last_time",
                "gamma", "phi_s", "last_time_s", "null_gamma",
                "gram_pool", "rhs_pool", "phi_pool", "sigma2_tilde",
            ):
                setattr(eng, name, data[name].copy())
            eng.fused_prev = data["fused_prev"].copy() if header["has_fused_prev"] else None
            eng.m = header["m"]
            eng.clock = header["clock"]
            eng.sel_idx = header["sel_idx"]
            eng.nulls_frozen = header["nulls_frozen"]
            tt = header["trimmed_time"]
            eng.trimmed = TrimmedSet(
                members=frozenset(header["trimmed"]),
                source_time=None if tt is None else TimePoint(tt[0], tt[1]),
            )
        return eng

    @classmethod
    def load_checkpoint(cls, path) -> "Engine":
        with open(path, "rb") as fh:
            return cls.from_checkpoint_bytes(fh.read())


def run(engine: Engine, batches, checkpoint_every: int = 0, checkpoint_path=None):
    """Drive the engine over an iterable of ``(t, ids, x, y)`` batches.

    Yields one `StepRecord` per batch; optionally writes a rolling
    checkpoint every ``checkpoint_every`` steps.
    """
    for t, ids, x, y in batches:
        rec = engine.step(t, ids, x, y)
        if checkpoint_every and checkpoint_path and engine.m % checkpoint_every == 0:
            engine.save_checkpoint(checkpoint_path)
        yield rec
