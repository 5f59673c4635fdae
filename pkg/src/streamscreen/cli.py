"""Command-line interface.

Subcommands:

* ``simulate`` - generate a synthetic dataset plus ground-truth files;
* ``run``      - stream a dataset (file or stdin) through the engine;
* ``resume``   - continue a run from a checkpoint;
* ``metrics``  - score recorded runs against ground truth;
* ``serve``    - start the HTTP service.

``run`` and ``resume`` execute in-process by default; with ``--server URL``
they act as thin clients against a running service instance.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import formats, metrics
from .engine import Engine, EngineConfig, StepRecord, run as run_engine
from .core import TimePoint
from .simulator import SimConfig, simulate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2


def _grid_comment(engine: Engine) -> str:
    return ";".join(
        f"{engine.grid.label_str(i)}:lambda={repr(spec.lam)}"
        for i, spec in enumerate(engine.grid.values)
    )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    cfg = SimConfig(
        n=args.n, p=args.p, sigma2=args.sigma2,
        rho_tempo=args.rho_tempo, rho_block=args.rho_block,
        block_size=args.block_size, warmup=args.warmup,
        seed=args.seed, null_model=args.null_model,
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = simulate(cfg)
    formats.write_dataset(ds, outdir / "dataset.tsv")
    formats.write_truth(ds.truth, outdir / "truth")
    with open(outdir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "n": cfg.n, "p": cfg.p, "sigma2": cfg.sigma2,
                "rho_tempo": cfg.rho_tempo, "rho_block": cfg.rho_block,
                "block_size": cfg.block_size, "warmup": cfg.warmup,
                "seed": cfg.seed, "null_model": cfg.null_model, "d": 2,
                "signal_fraction_fixed": ds.truth.signal_fraction_fixed,
                "signal_fraction_het": ds.truth.signal_fraction_het,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {cfg.n * cfg.p} observations to {outdir / 'dataset.tsv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run / resume
# ---------------------------------------------------------------------------

def _run_local(args, engine: Engine, outdir: Path) -> int:
    records = []
    ckpt_path = Path(args.checkpoint) if args.checkpoint else outdir / "checkpoint.npz"
    batches = formats.ingest(args.input, expected_d=engine.config.d)
    for rec in run_engine(
        engine, batches,
        checkpoint_every=args.checkpoint_every,
        checkpoint_path=ckpt_path if args.checkpoint_every else None,
    ):
        records.append(rec)
    formats.write_records(
        records, engine.config.d, outdir / f"records_{engine.config.method}.csv",
        grid_comment=_grid_comment(engine),
    )
    if args.final_checkpoint:
        engine.save_checkpoint(ckpt_path)
    print(f"processed {len(records)} time points -> {outdir}")
    return EXIT_OK


def _run_remote(args, outdir: Path, resume_blob: bytes | None = None) -> int:
    import httpx

    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=60.0) as client:
        if resume_blob is not None:
            resp = client.post(
                "/sessions/resume", content=resume_blob,
                headers={"content-type": "application/octet-stream"},
            )
            resp.raise_for_status()
            info = resp.json()
            args.d, args.method = info["d"], info["method"]
        else:
            resp = client.post("/sessions", json={
                "p": args.p, "d": args.d, "alpha": args.alpha,
                "warmup": args.warmup, "n_hint": args.grid_n, "method": args.method,
            })
            resp.raise_for_status()
        sid = resp.json()["session_id"]
        records = []
        for t, ids, x, y in formats.ingest(args.input, expected_d=args.d):
            payload = {
                "t": t,
                "observations": [
                    {"stream_id": int(s), "y": float(yv), "x": [float(v) for v in xv]}
                    for s, yv, xv in zip(ids, y, x)
                ],
            }
            r = client.post(f"/sessions/{sid}/batch", json=payload)
            r.raise_for_status()
            body = r.json()
            thr = body["threshold"]
            if body["threshold_is_infinite"]:
                thr = math.inf
            records.append(StepRecord(
                t=TimePoint(len(records), body["t"]),
                label=body["lambda_label"],
                beta_tilde=np.asarray(body["beta_tilde"]),
                sigma2_tilde=body["sigma2_tilde"],
                threshold=thr,
                rejected=frozenset(body["rejected"]),
            ))
        blob = client.get(f"/sessions/{sid}/checkpoint").content
        client.delete(f"/sessions/{sid}")
    formats.write_records(records, args.d, outdir / f"records_{args.method}.csv")
    if args.final_checkpoint or args.checkpoint:
        ckpt_path = Path(args.checkpoint) if args.checkpoint else outdir / "checkpoint.npz"
        ckpt_path.write_bytes(blob)
    print(f"processed {len(records)} time points via {base} -> {outdir}")
    return EXIT_OK


def _cmd_run(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.server:
        return _run_remote(args, outdir)
    engine = Engine(EngineConfig(
        p=args.p, d=args.d, alpha=args.alpha, warmup=args.warmup,
        n_hint=args.grid_n, method=args.method,
    ))
    return _run_local(args, engine, outdir)


def _cmd_resume(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.server:
        return _run_remote(args, outdir, resume_blob=Path(args.from_checkpoint).read_bytes())
    engine = Engine.load_checkpoint(args.from_checkpoint)
    return _run_local(args, engine, outdir)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _cmd_metrics(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    truth = formats.read_truth(args.truth_prefix, n=cfg["n"], p=cfg["p"])
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = []
    rows = []
    for rec_path in args.records:
        method = Path(rec_path).stem.replace("records_", "")
        log = formats.read_records(rec_path, method=method)
        report = metrics.evaluate(log, truth, warmup=cfg["warmup"])
        lines.append(
            f"method={method} fdr_mean={report.fdr_mean:.4f} "
            f"fdp_signal={report.fdp_signal_mean:.4f} "
            f"rejection_rate={report.rejection_rate_mean:.4f} "
            f"tpr_median={report.tpr_median:.4f} delay_median={report.delay_median:.1f} "
            f"rmse={report.rmse_full:.4f} rmse_post_warmup={report.rmse_post_warmup:.4f} "
            f"periods={report.n_periods}"
        )
        rows.append((method, report))
    report_path = outdir / "metrics.txt"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(outdir / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,fdr_mean,fdp_signal_mean,rejection_rate_mean,"
                 "tpr_median,delay_median,rmse_full,rmse_post_warmup,n_periods\n")
        for method, rep in rows:
            fh.write(
                f"{method},{repr(rep.fdr_mean)},{repr(rep.fdp_signal_mean)},"
                f"{repr(rep.rejection_rate_mean)},{repr(rep.tpr_median)},"
                f"{repr(rep.delay_median)},{repr(rep.rmse_full)},"
                f"{repr(rep.rmse_post_warmup)},{rep.n_periods}\n"
            )
    print("\n".join(lines))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("streamscreen.service:app", host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamscreen",
        description="Streaming varying-coefficient tracking and irregular-stream screening.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--n", type=int, required=True, help="number of time points")
    sim.add_argument("--p", type=int, required=True, help="number of streams")
    sim.add_argument("--sigma2", type=float, default=1.0)
    sim.add_argument("--rho-tempo", type=float, default=0.0)
    sim.add_argument("--rho-block", type=float, default=0.0)
    sim.add_argument("--block-size", type=int, default=200)
    sim.add_argument("--warmup", type=int, default=None)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--null-model", action="store_true", help="zero all drifts")
    sim.add_argument("--outdir", required=True)
    sim.set_defaults(func=_cmd_simulate)

    def add_run_args(p):
        p.add_argument("--input", required=True, help="dataset path, or '-' for stdin")
        p.add_argument("--outdir", required=True)
        p.add_argument("--method", default="dts", choices=["dts", "dts-pooled", "mean"])
        p.add_argument("--alpha", type=float, default=0.1)
        p.add_argument("--warmup", type=int, default=300)
        p.add_argument("--grid-n", type=int, default=2400,
                       help="anticipated run length used to build the lambda grid")
        p.add_argument("--p", type=int, help="number of streams")
        p.add_argument("--d", type=int, default=2)
        p.add_argument("--checkpoint", help="checkpoint file path")
        p.add_argument("--checkpoint-every", type=int, default=0)
        p.add_argument("--final-checkpoint", action="store_true")
        p.add_argument("--server", help="run as a thin client against this service URL")

    runp = sub.add_parser("run", help="stream observations through the engine")
    add_run_args(runp)
    runp.set_defaults(func=_cmd_run)

    res = sub.add_parser("resume", help="continue from a checkpoint")
    add_run_args(res)
    res.add_argument("--from-checkpoint", required=True)
    res.set_defaults(func=_cmd_resume)

    met = sub.add_parser("metrics", help="score recorded runs against ground truth")
    met.add_argument("--records", nargs="+", required=True)
    met.add_argument("--truth-prefix", required=True)
    met.add_argument("--config", required=True, help="config.json from simulate")
    met.add_argument("--outdir", required=True)
    met.set_defaults(func=_cmd_metrics)

    srv = sub.add_parser("serve", help="start the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.warmup is None:
        args.warmup = max(args.n // 8, 1)
    if args.command == "run" and not args.server and args.p is None:
        parser.error("run requires --p (number of streams)")
    if args.command == "run" and args.server and args.p is None:
        parser.error("run --server requires --p")
    try:
        return args.func(args)
    except formats.InputFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
