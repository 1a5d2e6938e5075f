"""FastAPI application exposing the training pipeline as async jobs.

Training and evaluation are long-running, so POSTing to /train or /eval
only registers a job; clients poll /jobs/{id} for progress and fetch the
per-instance table from /jobs/{id}/metrics once the job is done. Dataset
preparation endpoints run synchronously (they are I/O bound and quick).
"""
from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..checkpoint import load_checkpoint
from ..config import CmsConfig, TrainConfig
from ..data import load_omniglot, resolve_dataset, save_dataset, synth_glyphs
from ..errors import ActiveShotError
from ..training import evaluate, train
from .jobs import Job, JobManager
from .schemas import (
    DatasetInfo,
    EvalRequest,
    HealthResponse,
    JobCreated,
    JobInfo,
    MetricsResponse,
    PrepareRequest,
    SynthRequest,
    TrainRequest,
)


def train_config_from_request(req: TrainRequest) -> TrainConfig:
    return TrainConfig(
        model_kind=req.model,
        num_classes=req.classes,
        items_per_class=req.items_per_class,
        episodes_per_batch=req.batch_size,
        total_batches=req.batches,
        discount=req.discount,
        epsilon=req.epsilon,
        epsilon_start=req.epsilon_start,
        epsilon_anneal_batches=req.epsilon_anneal_batches,
        eval_batches=req.eval_batches,
        eval_epsilon=req.eval_epsilon,
        seed=req.seed,
        hidden_size=req.hidden_size,
        memory_slots=req.memory_slots,
        memory_width=req.memory_width,
        learning_rate=req.learning_rate,
        train_classes=req.train_classes,
        split_seed=req.split_seed,
        log_every=req.log_every,
        cms=CmsConfig(pool_multiplier=req.cms_multiplier, margin_steps=req.cms_margin_steps),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="activeshot", version=__version__)
    manager = JobManager()
    app.state.jobs = manager

    def job_info(job: Job) -> JobInfo:
        return JobInfo.model_validate(job.snapshot())

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/data/synthetic", response_model=DatasetInfo)
    def make_synthetic(req: SynthRequest) -> DatasetInfo:
        dataset = synth_glyphs(req.classes, req.samples_per_class, req.noise, req.seed)
        out = Path(req.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(out, dataset)
        return _dataset_info(str(out), dataset)

    @app.post("/data/prepare", response_model=DatasetInfo)
    def prepare(req: PrepareRequest) -> DatasetInfo:
        try:
            dataset = load_omniglot(req.src, rotations=req.rotations)
        except ActiveShotError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        out = Path(req.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(out, dataset)
        return _dataset_info(str(out), dataset)

    @app.get("/data/info", response_model=DatasetInfo)
    def data_info(path: str) -> DatasetInfo:
        try:
            dataset = resolve_dataset(path)
        except ActiveShotError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return _dataset_info(path, dataset)

    @app.post("/train", response_model=JobCreated)
    def submit_train(req: TrainRequest) -> JobCreated:
        try:
            config = train_config_from_request(req)
            config.validate()
            dataset = resolve_dataset(req.data)
        except (ActiveShotError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        out_dir = req.out

        def work(job: Job) -> dict:
            def progress(done: int, total: int, stats: dict) -> None:
                with job.lock:
                    job.progress.update(
                        batches_done=done, total_batches=total, **stats
                    )

            with job.lock:
                job.progress.update(batches_done=0, total_batches=config.total_batches)
            result = train(config, dataset, out_dir=out_dir, progress=progress)
            payload = {
                "out_dir": str(result.out_dir),
                "checkpoint": str(result.checkpoint_path),
                "training_curve": str(result.curve_path),
                "final_loss": result.history[-1].loss if result.history else None,
                "config_hash": config.config_hash(),
            }
            if result.eval_metrics is not None:
                payload["metrics_csv"] = str(result.metrics_path)
                payload["instance_table"] = result.eval_metrics.rows()
            return payload

        return JobCreated(job_id=manager.submit("train", work).job_id)

    @app.post("/eval", response_model=JobCreated)
    def submit_eval(req: EvalRequest) -> JobCreated:
        try:
            model, _, config = load_checkpoint(req.checkpoint)
            dataset = resolve_dataset(req.data)
        except ActiveShotError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        def work(job: Job) -> dict:
            from ..data import split_classes

            train_count = config.train_classes
            if train_count is None:
                train_count = max(
                    1, min(dataset.num_classes - 1, round(dataset.num_classes * 0.75))
                )
            _, test_ds = split_classes(dataset, train_count, config.split_seed)
            with job.lock:
                job.progress.update(batches_done=0, total_batches=req.batches)
            metrics = evaluate(
                model,
                test_ds,
                num_classes=config.num_classes,
                items_per_class=config.items_per_class,
                batches=req.batches,
                episodes_per_batch=req.batch_size,
                epsilon=req.epsilon,
                seed=req.seed,
            )
            with job.lock:
                job.progress.update(batches_done=req.batches)
            payload = {"instance_table": metrics.rows()}
            if req.csv:
                Path(req.csv).parent.mkdir(parents=True, exist_ok=True)
                metrics.write_csv(req.csv)
                payload["metrics_csv"] = req.csv
            return payload

        return JobCreated(job_id=manager.submit("eval", work).job_id)

    @app.get("/jobs", response_model=list[JobInfo])
    def list_jobs() -> list[JobInfo]:
        return [job_info(j) for j in manager.all()]

    @app.get("/jobs/{job_id}", response_model=JobInfo)
    def get_job(job_id: str) -> JobInfo:
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        return job_info(job)

    @app.get("/jobs/{job_id}/metrics", response_model=MetricsResponse)
    def job_metrics(job_id: str) -> MetricsResponse:
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        snap = job.snapshot()
        if snap["status"] != "done":
            raise HTTPException(status_code=409, detail=f"job is {snap['status']}")
        table = (snap["result"] or {}).get("instance_table")
        if table is None:
            raise HTTPException(status_code=409, detail="job produced no metrics table")
        return MetricsResponse(job_id=job_id, rows=table)

    return app


def _dataset_info(path: str, dataset) -> DatasetInfo:
    counts = [len(stack) for stack in dataset.classes.values()]
    return DatasetInfo(
        path=path,
        num_classes=dataset.num_classes,
        samples_per_class_min=min(counts) if counts else 0,
        split=dataset.split,
    )
