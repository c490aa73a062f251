"""Thin client for the service.

By default the FastAPI app is mounted in-process, so CLI runs are hermetic
and need no running server; setting STIC_SERVICE_URL points the same client
at a remote deployment (which must share the filesystem paths it is given).
"""

from __future__ import annotations

import time
import warnings
from typing import Optional

import httpx


class ServiceError(Exception):
    def __init__(self, status_code: int, error_class: str, message: str):
        self.status_code = status_code
        self.error_class = error_class
        super().__init__(f"{error_class}: {message}")
        self.message = message


def _make_embedded_client() -> httpx.Client:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient
    from .service import create_app

    return TestClient(create_app())


class ServiceClient:
    def __init__(self, base_url: Optional[str] = None):
        if base_url:
            self._http: httpx.Client = httpx.Client(
                base_url=base_url.rstrip("/"), timeout=httpx.Timeout(600.0)
            )
            self._poll_interval = 0.5
        else:
            self._http = _make_embedded_client()
            self._poll_interval = 0.02

    def close(self) -> None:
        self._http.close()

    def request(self, method: str, path: str, json: Optional[dict] = None) -> dict:
        response = self._http.request(method, path, json=json)
        if response.status_code >= 400:
            try:
                body = response.json()
            except ValueError:
                body = {}
            if "error_class" in body:
                raise ServiceError(response.status_code, body["error_class"], body["message"])
            detail = body.get("detail", response.text)
            error_class = (
                "RequestValidationError" if response.status_code == 422 else "HTTPError"
            )
            raise ServiceError(response.status_code, error_class, str(detail))
        return response.json()

    def run_job(self, path: str, payload: dict) -> dict:
        """Submit a job and poll it to a terminal state."""
        created = self.request("POST", path, json=payload)
        job_id = created["job_id"]
        while True:
            status = self.request("GET", f"/v1/jobs/{job_id}")
            if status["state"] in ("succeeded", "failed"):
                return status
            time.sleep(self._poll_interval)
