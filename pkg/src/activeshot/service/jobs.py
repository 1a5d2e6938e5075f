"""In-process job registry: one daemon thread per training/eval run."""
from __future__ import annotations

import threading
import traceback
import uuid
from dataclasses import dataclass, field
from typing import Callable


@dataclass
class Job:
    job_id: str
    kind: str
    status: str = "queued"
    progress: dict = field(default_factory=dict)
    error: str | None = None
    result: dict | None = None
    thread: threading.Thread | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "job_id": self.job_id,
                "kind": self.kind,
                "status": self.status,
                "progress": dict(self.progress),
                "error": self.error,
                "result": dict(self.result) if self.result is not None else None,
            }


class JobManager:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, work: Callable[[Job], dict]) -> Job:
        """Run ``work(job)`` on a daemon thread; its return dict becomes the
        job result, any exception marks the job failed."""
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind)

        def runner():
            with job.lock:
                job.status = "running"
            try:
                result = work(job)
            except Exception as exc:  # surfaced via the API, not the log
                with job.lock:
                    job.status = "failed"
                    job.error = f"{type(exc).__name__}: {exc}"
                    job.result = {"traceback": traceback.format_exc(limit=10)}
                return
            with job.lock:
                job.status = "done"
                job.result = result

        job.thread = threading.Thread(target=runner, daemon=True, name=f"job-{job.job_id}")
        with self._lock:
            self._jobs[job.job_id] = job
        job.thread.start()
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())

    def wait(self, job_id: str, timeout: float | None = None) -> None:
        job = self.get(job_id)
        if job is not None and job.thread is not None:
            job.thread.join(timeout)
