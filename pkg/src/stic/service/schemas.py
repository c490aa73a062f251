"""Pydantic request/response models for the service surface."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    error_class: str
    message: str


class CorruptRequest(BaseModel):
    image_b64: str
    mode: Literal["lowres", "jitter"]
    factor: Optional[float] = None
    seed: int = 0
    # Explicit jitter parameters; when absent they are sampled from `seed`.
    hue_shift_deg: Optional[float] = None
    sat_scale: Optional[float] = None
    bright_scale: Optional[float] = None
    contrast_scale: Optional[float] = None


class CorruptResponse(BaseModel):
    image_b64: str
    spec: dict


class LossRecordModel(BaseModel):
    id: str
    policy_w: float
    policy_l: float
    ref_w: float
    ref_l: float


class LossEvalRequest(BaseModel):
    records: list[LossRecordModel]
    lam: float = 0.1
    alpha: Union[str, float] = "1/1024"
    want_grads: bool = False


class InferRequest(BaseModel):
    image_b64: str
    question: str
    dar: bool = False
    mock: bool = False
    seed: int = 0
    config: Optional[dict] = None


class InferResponse(BaseModel):
    answer: str
    description: Optional[str] = None
    gen_calls: int
    model_id: str


class PreferenceJobRequest(BaseModel):
    images_dir: str
    out_path: str
    count: Optional[int] = None
    seed: Optional[int] = None
    mock: bool = False
    resume: bool = False
    max_workers: int = Field(default=4, ge=1)
    config: Optional[dict] = None


class InfuseJobRequest(BaseModel):
    sft_path: str
    images_root: str
    out_path: str
    subset: Optional[int] = None
    seed: Optional[int] = None
    mock: bool = False
    resume: bool = False
    max_workers: int = Field(default=4, ge=1)
    config: Optional[dict] = None


class JobCreated(BaseModel):
    job_id: str


class JobStatusResponse(BaseModel):
    job_id: str
    state: Literal["queued", "running", "succeeded", "failed"]
    summary: Optional[dict] = None
    error_class: Optional[str] = None
    message: Optional[str] = None


class ValidateRequest(BaseModel):
    path: str
    kind: Literal["preference", "infused"]


class ValidateResponse(BaseModel):
    path: str
    kind: str
    lines: int
    ok: bool
    violations: list[dict]
