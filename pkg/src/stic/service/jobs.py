"""In-memory registry of long-running pipeline jobs.

Jobs run on daemon threads; durable state lives in the run manifests, so a
lost process only costs the in-flight items, never completed work.
"""

from __future__ import annotations

import threading
import uuid
from typing import Callable, Optional


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()

    def submit(self, fn: Callable[[], dict]) -> str:
        job_id = uuid.uuid4().hex
        with self._lock:
            self._jobs[job_id] = {"job_id": job_id, "state": "queued"}
        thread = threading.Thread(target=self._run, args=(job_id, fn), daemon=True)
        thread.start()
        return job_id

    def _run(self, job_id: str, fn: Callable[[], dict]) -> None:
        with self._lock:
            self._jobs[job_id]["state"] = "running"
        try:
            summary = fn()
        except Exception as exc:
            with self._lock:
                self._jobs[job_id].update(
                    state="failed", error_class=type(exc).__name__, message=str(exc)
                )
        else:
            with self._lock:
                self._jobs[job_id].update(state="succeeded", summary=summary)

    def get(self, job_id: str) -> Optional[dict]:
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job else None
