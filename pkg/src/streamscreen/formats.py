"""File formats: observation records, run outputs, ground truth, reports.

Observation input is newline-delimited text, one record per line::

    t <tab> stream_id <tab> y <tab> x1 <tab> ... <tab> xd

UTF-8, '.' decimal point, timestamps as decimal numbers, records grouped by
time with strictly increasing timestamps across groups.

Run outputs are CSV, one line per time point::

    t, lambda_label, beta_tilde_1..d, sigma2_tilde, L, rejected_ids

with rejected ids semicolon-joined and L empty during the warm-up.  Floats
are serialised with ``repr`` (shortest round-trip), so identical runs write
identical bytes.
"""
from __future__ import annotations

import io
import math
import sys
from dataclasses import dataclass

import numpy as np

from .metrics import RunLog
from .simulator import Dataset, GroundTruth, SignalPeriod, drift_matrix

__all__ = [
    "InputFormatError",
    "iter_batches",
    "ingest",
    "dataset_batches",
    "write_dataset",
    "write_truth",
    "read_truth",
    "write_records",
    "read_records",
]


class InputFormatError(ValueError):
    """Malformed observation input; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# Observation ingestion
# ---------------------------------------------------------------------------

def iter_batches(lines, expected_d: int | None = None):
    """Group validated observation lines into per-time-point batches.

    Yields ``(t, ids, x, y)`` with ids as int64, x as (k, d) float64.
    Raises `InputFormatError` on malformed lines, inconsistent covariate
    dimension, or non-increasing time across groups.
    """
    d = expected_d
    cur_t: float | None = None
    ids: list[int] = []
    xs: list[list[float]] = []
    ys: list[float] = []
    last_emitted: float | None = None

    def flush():
        return (
            cur_t,
            np.asarray(ids, dtype=np.int64),
            np.asarray(xs, dtype=np.float64),
            np.asarray(ys, dtype=np.float64),
        )

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise InputFormatError(line_no, f"expected at least 4 tab-separated fields, got {len(parts)}")
        try:
            t = float(parts[0])
            sid = int(parts[1])
            yv = float(parts[2])
            xv = [float(v) for v in parts[3:]]
        except ValueError as exc:
            raise InputFormatError(line_no, f"unparseable number: {exc}") from None
        if not math.isfinite(t) or not math.isfinite(yv) or not all(math.isfinite(v) for v in xv):
            raise InputFormatError(line_no, "non-finite value")
        if sid < 1:
            raise InputFormatError(line_no, f"stream id must be >= 1, got {sid}")
        if d is None:
            d = len(xv)
        elif len(xv) != d:
            raise InputFormatError(line_no, f"expected {d} covariates, got {len(xv)}")

        if cur_t is None:
            cur_t = t
        elif t != cur_t:
            if t < cur_t:
                raise InputFormatError(line_no, f"timestamp {t} decreases below {cur_t}")
            batch = flush()
            last_emitted = batch[0]
            yield batch
            cur_t, ids, xs, ys = t, [], [], []
        if last_emitted is not None and t <= last_emitted:
            raise InputFormatError(line_no, f"timestamp {t} does not advance past {last_emitted}")
        ids.append(sid)
        xs.append(xv)
        ys.append(yv)

    if cur_t is not None:
        yield flush()


def ingest(path: str, expected_d: int | None = None):
    """Batches from a file path, or standard input when path is '-'."""
    if path == "-":
        yield from iter_batches(sys.stdin, expected_d)
        return
    with open(path, "r", encoding="utf-8") as fh:
        yield from iter_batches(fh, expected_d)


def dataset_batches(ds: Dataset):
    """In-memory dataset as engine batches (all streams, every time point)."""
    p = ds.config.p
    ids = np.arange(1, p + 1, dtype=np.int64)
    design = np.empty((p, 2))
    design[:, 0] = 1.0
    for i, t in enumerate(ds.times):
        design[:, 1] = ds.x[:, i]
        yield float(t), ids, design.copy(), ds.y[:, i].copy()


# ---------------------------------------------------------------------------
# Dataset and ground-truth files
# ---------------------------------------------------------------------------

def write_dataset(ds: Dataset, path) -> None:
    """Observation records grouped by time, streams in id order."""
    p = ds.config.p
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, t in enumerate(ds.times):
            ts = _fmt(t)
            for j in range(p):
                fh.write(
                    f"{ts}\t{j + 1}\t{_fmt(ds.y[j, i])}\t1.0\t{_fmt(ds.x[j, i])}\n"
                )


def write_truth(truth: GroundTruth, prefix) -> None:
    """Three CSVs: signal periods, sparse drift values, true coefficients."""
    with open(f"{prefix}_periods.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stream_id,start_t,end_t,delta_description\n")
        for pr in truth.periods:
            fh.write(f"{pr.stream_id},{pr.start},{pr.end},{pr.kind}:{_fmt(pr.level)}\n")
    delta = drift_matrix(truth)
    with open(f"{prefix}_drift.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,stream_id,delta\n")
        for j, i in zip(*np.nonzero(delta)):
            fh.write(f"{i + 1},{j + 1},{_fmt(delta[j, i])}\n")
    with open(f"{prefix}_beta.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(f"beta_{r + 1}" for r in range(truth.beta.shape[1])) + "\n")
        for i in range(truth.n):
            vals = ",".join(_fmt(v) for v in truth.beta[i])
            fh.write(f"{i + 1},{vals}\n")


def read_truth(prefix, n: int, p: int) -> GroundTruth:
    """Reconstruct ground truth from the files written by `write_truth`."""
    periods: list[SignalPeriod] = []
    with open(f"{prefix}_periods.csv", "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            sid, a, b, desc = line.rstrip("\n").split(",")
            kind, level = desc.split(":")
            periods.append(SignalPeriod(int(sid), int(a), int(b), kind, float(level)))
    beta_rows = []
    with open(f"{prefix}_beta.csv", "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            beta_rows.append([float(v) for v in parts[1:]])
    beta = np.asarray(beta_rows)
    o_sets: list[set[int]] = [set() for _ in range(n)]
    for pr in periods:
        for t in range(pr.start, pr.end + 1):
            if 1 <= t <= n:
                o_sets[t - 1].add(pr.stream_id)
    fixed = {pr.stream_id for pr in periods if pr.kind.startswith("fixed")}
    het = {pr.stream_id for pr in periods if pr.kind == "het"}
    return GroundTruth(
        n=n, p=p, beta=beta, periods=periods,
        o_sets=[frozenset(s) for s in o_sets],
        signal_fraction_fixed=len(fixed) / p,
        signal_fraction_het=len(het) / p,
    )


# ---------------------------------------------------------------------------
# Run output records
# ---------------------------------------------------------------------------

def records_to_text(records, d: int, grid_comment: str | None = None) -> str:
    buf = io.StringIO()
    if grid_comment:
        buf.write(f"# lambda_grid: {grid_comment}\n")
    cols = ["t", "lambda_label"] + [f"beta_tilde_{r + 1}" for r in range(d)] + [
        "sigma2_tilde", "L", "rejected_ids",
    ]
    buf.write(",".join(cols) + "\n")
    for rec in records:
        l_field = "" if rec.threshold is None else (
            "inf" if math.isinf(rec.threshold) else _fmt(rec.threshold)
        )
        rej = ";".join(str(j) for j in sorted(rec.rejected))
        beta = ",".join(_fmt(v) for v in rec.beta_tilde)
        buf.write(
            f"{_fmt(rec.t.time)},{rec.label},{beta},{_fmt(rec.sigma2_tilde)},{l_field},{rej}\n"
        )
    return buf.getvalue()


def write_records(records, d: int, path, grid_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(records_to_text(records, d, grid_comment))


def read_records(path, method: str = "dts") -> RunLog:
    """Parse a records CSV back into a `RunLog`."""
    times, labels, betas, sig2, thresholds, rejected = [], [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            d = len(header) - 5
            times.append(float(parts[0]))
            labels.append(parts[1])
            betas.append([float(v) for v in parts[2:2 + d]])
            sig2.append(float(parts[2 + d]))
            lf = parts[3 + d]
            thresholds.append(float("nan") if lf == "" else float(lf))
            rj = parts[4 + d]
            rejected.append(frozenset(int(v) for v in rj.split(";") if v))
    return RunLog(
        method=method,
        times=np.asarray(times),
        labels=labels,
        beta_tilde=np.asarray(betas),
        sigma2_tilde=np.asarray(sig2),
        thresholds=np.asarray(thresholds),
        rejected=rejected,
    )
