"""Command-line client for the activeshot service.

``serve`` starts the HTTP service; every other subcommand is a thin
client that talks to a running server (``--server`` or the
ACTIVESHOT_SERVER environment variable), submits work, and polls until
completion. Train options may come from a key=value config file, with
explicit command-line flags taking precedence.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from typing import Any

import httpx

from .config import load_config_file
from .errors import ActiveShotError

DEFAULT_SERVER = "http://127.0.0.1:8765"

# Train settings accepted from both the config file and the command line.
_TRAIN_FIELDS: dict[str, type] = {
    "model": str,
    "classes": int,
    "cms_multiplier": int,
    "cms_margin_steps": int,
    "batches": int,
    "batch_size": int,
    "seed": int,
    "data": str,
    "out": str,
    "items_per_class": int,
    "discount": float,
    "epsilon": float,
    "epsilon_start": float,
    "epsilon_anneal_batches": int,
    "eval_batches": int,
    "eval_epsilon": float,
    "train_classes": int,
    "split_seed": int,
    "log_every": int,
    "hidden_size": int,
    "memory_slots": int,
    "memory_width": int,
    "learning_rate": float,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activeshot")
    parser.add_argument(
        "--server",
        default=os.environ.get("ACTIVESHOT_SERVER", DEFAULT_SERVER),
        help="service base URL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)

    tr = sub.add_parser("train", help="submit a training job and wait")
    tr.add_argument("--config", help="key=value file with defaults for any train flag")
    tr.add_argument("--model", choices=["lstm", "ntm", "lrua"])
    tr.add_argument("--classes", type=int)
    tr.add_argument("--cms-multiplier", type=int, choices=[0, 1, 2, 3])
    tr.add_argument("--cms-margin-steps", type=int)
    tr.add_argument("--batches", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--data")
    tr.add_argument("--out")
    tr.add_argument("--items-per-class", type=int)
    tr.add_argument("--discount", type=float)
    tr.add_argument("--epsilon", type=float)
    tr.add_argument("--epsilon-start", type=float)
    tr.add_argument("--epsilon-anneal-batches", type=int)
    tr.add_argument("--eval-batches", type=int)
    tr.add_argument("--eval-epsilon", type=float)
    tr.add_argument("--train-classes", type=int)
    tr.add_argument("--split-seed", type=int)
    tr.add_argument("--log-every", type=int)
    tr.add_argument("--hidden-size", type=int)
    tr.add_argument("--memory-slots", type=int)
    tr.add_argument("--memory-width", type=int)
    tr.add_argument("--learning-rate", type=float)
    tr.add_argument("--poll", type=float, default=2.0, help="status poll interval (seconds)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint and wait")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--batches", type=int, required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--csv")
    ev.add_argument("--batch-size", type=int, default=16)
    ev.add_argument("--epsilon", type=float, default=0.0)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--poll", type=float, default=2.0)

    data = sub.add_parser("data", help="dataset preparation")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    prep = data_sub.add_parser("prepare", help="ingest an image tree into a cache file")
    prep.add_argument("--src", required=True)
    prep.add_argument("--out", required=True)
    prep.add_argument("--rotations", action="store_true")
    synth = data_sub.add_parser("synth", help="generate a synthetic glyph dataset")
    synth.add_argument("--classes", type=int, required=True)
    synth.add_argument("--samples", type=int, default=20)
    synth.add_argument("--noise", type=float, default=0.05)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    jobs = sub.add_parser("jobs", help="list jobs or show one")
    jobs.add_argument("--job", help="job id to show")

    return parser


def _collect_train_payload(args: argparse.Namespace) -> dict[str, Any]:
    payload: dict[str, Any] = {}
    if args.config:
        for key, raw in load_config_file(args.config).items():
            if key not in _TRAIN_FIELDS:
                raise ActiveShotError(f"unknown config key {key!r}")
            payload[key] = _TRAIN_FIELDS[key](raw)
    for key, caster in _TRAIN_FIELDS.items():
        value = getattr(args, key, None)
        if value is not None:
            payload[key] = caster(value)
    for required in ("batches", "data", "out"):
        if required not in payload:
            raise ActiveShotError(f"train requires --{required.replace('_', '-')} (or a config entry)")
    return payload


def _print_instance_table(rows: list[dict]) -> None:
    print("instance  accuracy%  request%  predictions  requests")
    for row in rows:
        acc = "-" if row["accuracy_pct"] is None else f"{row['accuracy_pct']:.1f}"
        print(
            f"{row['instance_index']:>8}  {acc:>9}  {row['request_pct']:>8.1f}"
            f"  {row['n_predictions']:>11}  {row['n_requests']:>8}"
        )


def _wait_for_job(client: httpx.Client, job_id: str, poll: float) -> dict:
    last_done = -1
    while True:
        resp = client.get(f"/jobs/{job_id}")
        resp.raise_for_status()
        info = resp.json()
        progress = info.get("progress") or {}
        done = progress.get("batches_done") or 0
        if done != last_done and progress.get("total_batches"):
            loss = progress.get("loss")
            msg = f"batch {done}/{progress['total_batches']}"
            if loss is not None:
                msg += f"  loss={loss:.4f}"
            if progress.get("request_pct") is not None:
                msg += f"  request%={progress['request_pct']:.1f}"
            print(msg, flush=True)
            last_done = done
        if info["status"] in ("done", "failed"):
            return info
        time.sleep(poll)


def _run_job_command(client: httpx.Client, endpoint: str, payload: dict, poll: float) -> int:
    resp = client.post(endpoint, json=payload)
    if resp.status_code >= 400:
        print(f"error: {resp.json().get('detail', resp.text)}", file=sys.stderr)
        return 1
    job_id = resp.json()["job_id"]
    print(f"job {job_id} submitted")
    info = _wait_for_job(client, job_id, poll)
    if info["status"] == "failed":
        print(f"job failed: {info['error']}", file=sys.stderr)
        return 1
    result = info.get("result") or {}
    for key in ("checkpoint", "metrics_csv", "training_curve"):
        if result.get(key):
            print(f"{key}: {result[key]}")
    if result.get("instance_table"):
        _print_instance_table(result["instance_table"])
    return 0


def main(argv: list[str] | None = None, client: httpx.Client | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    owns_client = client is None
    if client is None:
        client = httpx.Client(base_url=args.server, timeout=60.0)
    try:
        if args.command == "train":
            try:
                payload = _collect_train_payload(args)
            except ActiveShotError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 2
            return _run_job_command(client, "/train", payload, args.poll)

        if args.command == "eval":
            payload = {
                "checkpoint": args.checkpoint,
                "batches": args.batches,
                "data": args.data,
                "csv": args.csv,
                "batch_size": args.batch_size,
                "epsilon": args.epsilon,
                "seed": args.seed,
            }
            return _run_job_command(client, "/eval", payload, args.poll)

        if args.command == "data":
            if args.data_command == "prepare":
                resp = client.post(
                    "/data/prepare",
                    json={"src": args.src, "out": args.out, "rotations": args.rotations},
                )
            else:
                resp = client.post(
                    "/data/synthetic",
                    json={
                        "classes": args.classes,
                        "samples_per_class": args.samples,
                        "noise": args.noise,
                        "seed": args.seed,
                        "out": args.out,
                    },
                )
            if resp.status_code >= 400:
                print(f"error: {resp.json().get('detail', resp.text)}", file=sys.stderr)
                return 1
            info = resp.json()
            print(
                f"dataset at {info['path']}: {info['num_classes']} classes,"
                f" >= {info['samples_per_class_min']} samples each"
            )
            return 0

        if args.command == "jobs":
            if args.job:
                resp = client.get(f"/jobs/{args.job}")
                if resp.status_code == 404:
                    print(f"error: no job {args.job}", file=sys.stderr)
                    return 1
                info = resp.json()
                print(f"{info['job_id']}  {info['kind']}  {info['status']}")
                if info.get("error"):
                    print(f"error: {info['error']}")
                if (info.get("result") or {}).get("instance_table"):
                    _print_instance_table(info["result"]["instance_table"])
            else:
                resp = client.get("/jobs")
                resp.raise_for_status()
                for info in resp.json():
                    progress = info.get("progress") or {}
                    done = progress.get("batches_done") or 0
                    total = progress.get("total_batches") or 0
                    print(f"{info['job_id']}  {info['kind']:5}  {info['status']:7}  {done}/{total}")
            return 0
    finally:
        if owns_client:
            client.close()
    return 2


if __name__ == "__main__":
    sys.exit(main())
