"""FastAPI application wrapping the data-factory core.

Stateless operations (corrupt, loss-eval, infer, validate) answer inline;
dataset construction runs as background jobs that clients poll, since real
runs are long. Core exceptions surface as JSON bodies carrying the original
exception class name, which the CLI maps to its exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..corruption import ParameterRangeError
from ..genclient import AuthenticationFailure, GenerationError
from ..losscore import RecordParseError
from ..pipeline import (
    IngestError,
    ManifestMismatch,
    SkipRateExceeded,
    validate_dataset,
)
from . import runners, schemas
from .jobs import JobRegistry

_BAD_REQUEST = (ValueError, ParameterRangeError, RecordParseError, ManifestMismatch)
_UPSTREAM = (GenerationError, AuthenticationFailure)


def create_app() -> FastAPI:
    app = FastAPI(title="stic service", version=__version__)
    app.state.jobs = JobRegistry()

    def _error(status: int, exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=status,
            content={"error_class": type(exc).__name__, "message": str(exc)},
        )

    @app.exception_handler(ParameterRangeError)
    @app.exception_handler(RecordParseError)
    @app.exception_handler(ManifestMismatch)
    @app.exception_handler(ValueError)
    async def _bad_request(request: Request, exc: Exception):
        return _error(400, exc)

    @app.exception_handler(IngestError)
    async def _not_found(request: Request, exc: Exception):
        return _error(404, exc)

    @app.exception_handler(SkipRateExceeded)
    async def _skip_rate(request: Request, exc: Exception):
        return _error(409, exc)

    @app.exception_handler(GenerationError)
    async def _upstream(request: Request, exc: Exception):
        return _error(502, exc)

    @app.get("/v1/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/corrupt", response_model=schemas.CorruptResponse)
    def corrupt(req: schemas.CorruptRequest):
        return runners.corrupt_image(req)

    @app.post("/v1/loss/eval")
    def loss_eval(req: schemas.LossEvalRequest):
        return runners.eval_losses(req)

    @app.post("/v1/infer", response_model=schemas.InferResponse)
    def infer(req: schemas.InferRequest):
        return runners.infer(req)

    @app.post("/v1/validate", response_model=schemas.ValidateResponse)
    def validate(req: schemas.ValidateRequest):
        report = validate_dataset(req.path, req.kind)
        return schemas.ValidateResponse(
            path=report.path,
            kind=report.schema,
            lines=report.lines,
            ok=report.ok,
            violations=[{"line": n, "message": m} for n, m in report.violations],
        )

    @app.post("/v1/jobs/preference", response_model=schemas.JobCreated)
    def submit_preference(req: schemas.PreferenceJobRequest):
        job_id = app.state.jobs.submit(lambda: runners.run_preference_job(req))
        return schemas.JobCreated(job_id=job_id)

    @app.post("/v1/jobs/infuse", response_model=schemas.JobCreated)
    def submit_infuse(req: schemas.InfuseJobRequest):
        job_id = app.state.jobs.submit(lambda: runners.run_infuse_job(req))
        return schemas.JobCreated(job_id=job_id)

    @app.get("/v1/jobs/{job_id}", response_model=schemas.JobStatusResponse)
    def job_status(job_id: str):
        job = app.state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")
        return schemas.JobStatusResponse(**job)

    return app
