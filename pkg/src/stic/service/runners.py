"""Bind service requests to the core pipeline, corruption and loss modules."""

from __future__ import annotations

import base64
import hashlib
from pathlib import Path

from ..config import RunConfig, config_from_dict, digest_payload, parse_alpha, run_digest
from ..corruption import ColorJitter, CorruptionSpec, LowRes, apply_corruption
from ..genclient import (
    ChatCompletionsClient,
    GenerationRequest,
    MockBackend,
    describe_then_respond,
)
from ..imagefiles import decode_image_bytes, encode_png
from ..losscore import LossConfig, PreferenceLogprobRecord, batch_report
from ..pipeline import (
    build_infused_dataset,
    build_preference_dataset,
    ingest_images,
    load_resume_manifest,
    load_sft_records,
    manifest_path,
    run_log,
)
from ..prompts import PromptRegistry
from ..seeding import SeededRng
from . import schemas


def _config(req_config) -> RunConfig:
    return config_from_dict(req_config) if req_config else RunConfig()


def _make_client(cfg: RunConfig, mock: bool, seed: int):
    if mock:
        return MockBackend(seed=seed)
    return ChatCompletionsClient(cfg.endpoint)


def corrupt_image(req: schemas.CorruptRequest) -> schemas.CorruptResponse:
    img = decode_image_bytes(base64.b64decode(req.image_b64))
    if req.mode == "lowres":
        factor = 0.125 if req.factor is None else req.factor
        spec = CorruptionSpec(mode=LowRes(factor=factor), seed=req.seed)
    elif all(
        v is not None
        for v in (req.hue_shift_deg, req.sat_scale, req.bright_scale, req.contrast_scale)
    ):
        spec = CorruptionSpec(
            mode=ColorJitter(
                hue_shift_deg=req.hue_shift_deg,
                sat_scale=req.sat_scale,
                bright_scale=req.bright_scale,
                contrast_scale=req.contrast_scale,
            ),
            seed=req.seed,
        )
    else:
        rng = SeededRng(req.seed, "cli.corrupt.jitter")
        spec = CorruptionSpec(
            mode=ColorJitter(
                hue_shift_deg=rng.next_uniform(-180.0, 180.0),
                sat_scale=rng.next_uniform(0.2, 1.8),
                bright_scale=rng.next_uniform(0.2, 1.8),
                contrast_scale=rng.next_uniform(0.2, 1.8),
            ),
            seed=req.seed,
        )
    out = apply_corruption(img, spec)
    return schemas.CorruptResponse(
        image_b64=base64.b64encode(encode_png(out)).decode("ascii"),
        spec=spec.to_dict(),
    )


def eval_losses(req: schemas.LossEvalRequest) -> dict:
    records = [
        PreferenceLogprobRecord(
            record_id=r.id,
            policy_w=r.policy_w,
            policy_l=r.policy_l,
            ref_w=r.ref_w,
            ref_l=r.ref_l,
        )
        for r in req.records
    ]
    cfg = LossConfig(lam=req.lam, alpha=float(parse_alpha(req.alpha)))
    return batch_report(records, cfg, want_grads=req.want_grads).to_dict()


def infer(req: schemas.InferRequest) -> schemas.InferResponse:
    cfg = _config(req.config)
    client = _make_client(cfg, req.mock, req.seed)
    image = decode_image_bytes(base64.b64decode(req.image_b64))
    registry = PromptRegistry.load(cfg.prompts_path)
    if req.dar:
        rng = SeededRng(req.seed, "infer.dar")
        description, answer = describe_then_respond(
            client,
            image,
            req.question,
            rng,
            registry=registry,
            max_tokens=cfg.decoding.max_tokens,
            temperature=cfg.decoding.temperature,
        )
    else:
        description = None
        answer = client.generate(
            GenerationRequest(
                prompt=req.question,
                image=image,
                max_tokens=cfg.decoding.max_tokens,
                temperature=cfg.decoding.temperature,
                seed=req.seed,
            )
        ).text
    gen_calls = client.calls if isinstance(client, MockBackend) else (2 if req.dar else 1)
    model_id = "mock-vlm" if req.mock else cfg.endpoint.model
    return schemas.InferResponse(
        answer=answer, description=description, gen_calls=gen_calls, model_id=model_id
    )


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_preference_job(req: schemas.PreferenceJobRequest) -> dict:
    cfg = _config(req.config)
    seed = cfg.seed if req.seed is None else req.seed
    count = req.count if req.count is not None else cfg.preference_count
    images_dir = str(Path(req.images_dir).resolve())
    payload = digest_payload(
        cfg, stage="preference", images_dir=images_dir, count=count, seed=seed, mock=req.mock
    )
    digest = run_digest(
        cfg, stage="preference", images_dir=images_dir, count=count, seed=seed, mock=req.mock
    )
    registry = PromptRegistry.load(cfg.prompts_path)
    images, skips = ingest_images(req.images_dir, count)
    client = _make_client(cfg, req.mock, seed)
    resume_manifest = (
        load_resume_manifest(req.out_path, digest, payload) if req.resume else None
    )
    with run_log(str(req.out_path) + ".log"):
        out, manifest = build_preference_dataset(
            images,
            req.out_path,
            client,
            registry,
            seed,
            config_digest=digest,
            config_snapshot=payload,
            backend="mock" if req.mock else "live",
            lowres_factor=cfg.corruption.lowres_factor,
            temperature=cfg.decoding.temperature,
            max_tokens=cfg.decoding.max_tokens,
            max_workers=req.max_workers,
            resume_manifest=resume_manifest,
            ingest_skips=skips,
        )
    return {
        "out_path": str(out),
        "manifest_path": str(manifest_path(out)),
        "config_digest": digest,
        "counts": manifest.summary(),
        "output_sha256": _file_sha256(out),
    }


def run_infuse_job(req: schemas.InfuseJobRequest) -> dict:
    cfg = _config(req.config)
    seed = cfg.seed if req.seed is None else req.seed
    subset = req.subset if req.subset is not None else cfg.infuse_subset
    sft_path = str(Path(req.sft_path).resolve())
    images_root = str(Path(req.images_root).resolve())
    payload = digest_payload(
        cfg, stage="infused", sft_path=sft_path, images_root=images_root,
        subset=subset, seed=seed, mock=req.mock,
    )
    digest = run_digest(
        cfg, stage="infused", sft_path=sft_path, images_root=images_root,
        subset=subset, seed=seed, mock=req.mock,
    )
    registry = PromptRegistry.load(cfg.prompts_path)
    sft_records = load_sft_records(req.sft_path)
    client = _make_client(cfg, req.mock, seed)
    resume_manifest = (
        load_resume_manifest(req.out_path, digest, payload) if req.resume else None
    )
    with run_log(str(req.out_path) + ".log"):
        out, manifest = build_infused_dataset(
            sft_records,
            subset,
            req.images_root,
            req.out_path,
            client,
            registry,
            seed,
            config_digest=digest,
            config_snapshot=payload,
            backend="mock" if req.mock else "live",
            temperature=cfg.decoding.temperature,
            max_tokens=cfg.decoding.max_tokens,
            max_workers=req.max_workers,
            resume_manifest=resume_manifest,
        )
    return {
        "out_path": str(out),
        "manifest_path": str(manifest_path(out)),
        "config_digest": digest,
        "counts": manifest.summary(),
        "output_sha256": _file_sha256(out),
    }
