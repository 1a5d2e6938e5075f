"""Request/response models for the service API."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class TrainRequest(BaseModel):
    model: Literal["lstm", "ntm", "lrua"] = "lrua"
    classes: int = Field(3, ge=1, description="classes per episode (C)")
    cms_multiplier: int = Field(0, ge=0, le=3, description="0 disables the margin pre-screen")
    cms_margin_steps: int = Field(4, ge=2)
    batches: int = Field(..., ge=0)
    batch_size: int = Field(16, ge=1, description="episodes per batch")
    seed: int = 0
    data: str = Field(..., description="dataset cache file, or a directory holding one")
    out: str = Field(..., description="directory for checkpoint and CSV outputs")
    items_per_class: int = Field(10, ge=1)
    discount: float = Field(0.5, ge=0.0, lt=1.0)
    epsilon: float = Field(0.05, ge=0.0, le=1.0)
    epsilon_start: Optional[float] = Field(
        None, ge=0.0, le=1.0, description="anneal exploration from here down to epsilon"
    )
    epsilon_anneal_batches: int = Field(0, ge=0)
    eval_batches: int = Field(25, ge=0)
    eval_epsilon: float = Field(0.0, ge=0.0, le=1.0)
    train_classes: Optional[int] = Field(None, ge=1)
    split_seed: int = 0
    log_every: int = Field(50, ge=1)
    hidden_size: int = Field(200, ge=1)
    memory_slots: int = Field(128, ge=1)
    memory_width: int = Field(40, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)


class EvalRequest(BaseModel):
    checkpoint: str
    batches: int = Field(..., ge=1)
    data: str
    csv: Optional[str] = Field(None, description="write the per-instance table here")
    batch_size: int = Field(16, ge=1)
    epsilon: float = Field(0.0, ge=0.0, le=1.0)
    seed: int = 0


class SynthRequest(BaseModel):
    classes: int = Field(..., ge=1)
    samples_per_class: int = Field(20, ge=1)
    noise: float = Field(0.05, ge=0.0, le=1.0)
    seed: int = 0
    out: str


class PrepareRequest(BaseModel):
    src: str
    out: str
    rotations: bool = False


class DatasetInfo(BaseModel):
    path: str
    num_classes: int
    samples_per_class_min: int
    split: str


class JobProgress(BaseModel):
    batches_done: int = 0
    total_batches: int = 0
    loss: Optional[float] = None
    mean_reward: Optional[float] = None
    accuracy_pct: Optional[float] = None
    request_pct: Optional[float] = None


class JobInfo(BaseModel):
    job_id: str
    kind: Literal["train", "eval"]
    status: Literal["queued", "running", "done", "failed"]
    progress: JobProgress
    error: Optional[str] = None
    result: Optional[dict] = None


class JobCreated(BaseModel):
    job_id: str


class InstanceRow(BaseModel):
    instance_index: int
    accuracy_pct: Optional[float]
    request_pct: float
    n_predictions: int
    n_requests: int


class MetricsResponse(BaseModel):
    job_id: str
    rows: list[InstanceRow]


class HealthResponse(BaseModel):
    status: str
    version: str
