"""HTTP service wrapping the streaming engine.

Sessions hold live engine state server-side; clients create a session, post
one observation batch per time point, and read back the fused estimate and
screening decision.  Checkpoints round-trip through the same binary format
the CLI uses, so a session can be moved between the service and offline
runs.
"""
from __future__ import annotations

import math
import threading
import uuid

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

import numpy as np

from .engine import Engine, EngineConfig

app = FastAPI(title="streamscreen", version="0.1.0")

_sessions: dict[str, Engine] = {}
_lock = threading.Lock()


class SessionConfig(BaseModel):
    p: int = Field(ge=2)
    d: int = Field(default=2, ge=1)
    alpha: float = Field(default=0.1, gt=0.0, lt=1.0)
    warmup: int = Field(default=300, ge=1)
    n_hint: int = Field(default=2400, ge=2)
    method: str = "dts"


class SessionInfo(BaseModel):
    session_id: str
    p: int
    d: int
    alpha: float
    warmup: int
    method: str
    steps_absorbed: int
    clock: float | None
    nulls_frozen: bool


class ObservationIn(BaseModel):
    stream_id: int = Field(ge=1)
    y: float
    x: list[float]


class BatchIn(BaseModel):
    t: float
    observations: list[ObservationIn]


class StepOut(BaseModel):
    t: float
    lambda_label: str
    beta_tilde: list[float]
    sigma2_tilde: float
    threshold: float | None        # null during warm-up and when infinite
    threshold_is_infinite: bool    # distinguishes "no rejections" from warm-up
    rejected: list[int]


def _get(session_id: str) -> Engine:
    eng = _sessions.get(session_id)
    if eng is None:
        raise HTTPException(status_code=404, detail="unknown session")
    return eng


def _info(session_id: str, eng: Engine) -> SessionInfo:
    return SessionInfo(
        session_id=session_id,
        p=eng.config.p,
        d=eng.config.d,
        alpha=eng.config.alpha,
        warmup=eng.config.warmup,
        method=eng.config.method,
        steps_absorbed=eng.m,
        clock=None if not math.isfinite(eng.clock) else eng.clock,
        nulls_frozen=eng.nulls_frozen,
    )


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/sessions", response_model=SessionInfo)
def create_session(cfg: SessionConfig):
    try:
        engine = Engine(EngineConfig(
            p=cfg.p, d=cfg.d, alpha=cfg.alpha, warmup=cfg.warmup,
            n_hint=cfg.n_hint, method=cfg.method,
        ))
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    sid = uuid.uuid4().hex
    with _lock:
        _sessions[sid] = engine
    return _info(sid, engine)


@app.get("/sessions/{session_id}", response_model=SessionInfo)
def session_state(session_id: str):
    return _info(session_id, _get(session_id))


@app.delete("/sessions/{session_id}")
def close_session(session_id: str):
    with _lock:
        if _sessions.pop(session_id, None) is None:
            raise HTTPException(status_code=404, detail="unknown session")
    return {"closed": session_id}


@app.post("/sessions/{session_id}/batch", response_model=StepOut)
def post_batch(session_id: str, batch: BatchIn):
    eng = _get(session_id)
    if not batch.observations:
        raise HTTPException(status_code=422, detail="empty batch")
    ids = np.array([o.stream_id for o in batch.observations], dtype=np.int64)
    x = np.array([o.x for o in batch.observations], dtype=np.float64)
    y = np.array([o.y for o in batch.observations], dtype=np.float64)
    try:
        with _lock:
            rec = eng.step(batch.t, ids, x, y)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    except np.linalg.LinAlgError as exc:
        raise HTTPException(status_code=500, detail=f"numerical failure: {exc}") from None
    thr = rec.threshold
    return StepOut(
        t=rec.t.time,
        lambda_label=rec.label,
        beta_tilde=[float(v) for v in rec.beta_tilde],
        sigma2_tilde=rec.sigma2_tilde,
        threshold=None if thr is None or math.isinf(thr) else thr,
        threshold_is_infinite=thr is not None and math.isinf(thr),
        rejected=sorted(rec.rejected),
    )


@app.get("/sessions/{session_id}/checkpoint")
def download_checkpoint(session_id: str):
    eng = _get(session_id)
    with _lock:
        blob = eng.checkpoint_bytes()
    return Response(content=blob, media_type="application/octet-stream")


@app.post("/sessions/resume", response_model=SessionInfo)
async def resume_session(request: Request):
    blob = await request.body()
    if not blob:
        raise HTTPException(status_code=422, detail="empty checkpoint")
    try:
        engine = Engine.from_checkpoint_bytes(blob)
    except Exception as exc:
        raise HTTPException(status_code=422, detail=f"bad checkpoint: {exc}") from None
    sid = uuid.uuid4().hex
    with _lock:
        _sessions[sid] = engine
    return _info(sid, engine)
