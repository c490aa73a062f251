"""Dataset construction pipelines.

Stage one builds an image-description preference dataset from unlabeled
images: for every image the preferred response comes from the step-by-step
prompt on the clean image, and the dispreferred response comes from either a
hallucination-inducing prompt on the clean image or the stored training
prompt on a corrupted image, chosen by a fair seeded coin.

Stage two builds a description-infused instruction dataset: a seeded
subsample of existing SFT rows gets a generated image description prepended
to its first instruction, with the ground-truth completion untouched.

Both stages write a JSON manifest sidecar after every record, so an
interrupted run resumes without regenerating and re-emits byte-identical
output under a deterministic backend. Output ordering is always the input
ordering, independent of worker scheduling.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .config import canonical_json
from .corruption import DEFAULT_LOWRES_FACTOR, apply_corruption, sample_corruption
from .genclient import (
    AuthenticationFailure,
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    GenerationError,
    GenerationRequest,
)
from .imagefiles import load_image, read_dimensions
from .prompts import INFUSION_PREFIX, PromptRegistry, compose_infused_prompt
from .seeding import SeededRng

logger = logging.getLogger(__name__)

SKIP_RATE_LIMIT = 0.10
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

_PREF_FIELDS = ("image", "prompt", "chosen", "rejected", "provenance", "meta")
_INFUSED_FIELDS = ("id", "image", "prompt", "completion", "description")


class PipelineError(Exception):
    pass


class IngestError(PipelineError):
    """No usable inputs."""


class SkipRateExceeded(PipelineError):
    """Too many per-item failures to trust the run."""


class ManifestMismatch(PipelineError):
    """Manifest was produced under a different configuration."""


class DegeneratePair(GenerationError):
    """Preferred and dispreferred generations came out identical."""


@contextmanager
def run_log(path: str | Path):
    """Attach a file handler capturing the package's request/response log
    for the duration of one run. Handlers are process-global, so concurrent
    runs interleave into their own files only per-run best-effort."""
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(
        logging.Formatter("[%(asctime)s] %(levelname)s %(name)s: %(message)s")
    )
    package_logger = logging.getLogger("stic")
    previous_level = package_logger.level
    package_logger.addHandler(handler)
    package_logger.setLevel(logging.DEBUG)
    try:
        yield
    finally:
        package_logger.removeHandler(handler)
        package_logger.setLevel(previous_level)
        handler.close()


def sha256_file(path: Path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: Path
    width: int
    height: int
    digest: str


@dataclass(frozen=True)
class SftRecord:
    sft_id: str
    image_ref: Optional[str]
    turns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.turns or self.turns[0][0] != "human":
            raise ValueError(f"sft record {self.sft_id!r}: first turn must be from the human")
        if not any(role == "assistant" for role, _ in self.turns):
            raise ValueError(f"sft record {self.sft_id!r}: needs at least one assistant turn")

    def first_instruction(self) -> str:
        return self.turns[0][1]

    def first_completion(self) -> str:
        for role, text in self.turns:
            if role == "assistant":
                return text
        raise AssertionError("unreachable: validated at construction")


def ingest_images(
    directory: str | Path, limit: Optional[int] = None
) -> tuple[list[ImageRecord], list[dict]]:
    """Scan a directory tree for images, ordered by relative path.

    Returns (records, skips); unreadable files become skip entries. The
    limit applies to the ordering before decoding.
    """
    root = Path(directory)
    if not root.is_dir():
        raise IngestError(f"image directory {root} does not exist")
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    if limit is not None:
        paths = paths[:limit]
    records: list[ImageRecord] = []
    skips: list[dict] = []
    for p in paths:
        rel = p.relative_to(root).as_posix()
        try:
            width, height = read_dimensions(p)
            records.append(
                ImageRecord(
                    image_id=rel, path=p, width=width, height=height, digest=sha256_file(p)
                )
            )
        except Exception as exc:
            logger.warning("skipping unreadable image %s: %s", rel, exc)
            skips.append({"path": rel, "reason": str(exc)})
    if not records:
        raise IngestError(f"no usable images under {root}")
    return records, skips


def load_sft_records(path: str | Path) -> list[SftRecord]:
    """Instruction data in the conversation JSONL schema:
    {"id", "image"?, "conversations": [{"from": "human"|"gpt", "value"}]}."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"sft file line {line_no}: invalid JSON: {exc.msg}") from exc
            try:
                convo = obj["conversations"]
                turns = tuple(
                    ("assistant" if turn["from"] == "gpt" else turn["from"], turn["value"])
                    for turn in convo
                )
                records.append(
                    SftRecord(
                        sft_id=str(obj["id"]),
                        image_ref=obj.get("image"),
                        turns=turns,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"sft file line {line_no}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


class RunManifest:
    """Sidecar record of a pipeline run: per-item status plus the stored
    results, enabling deterministic resumption and byte-identical
    re-emission of the output file."""

    def __init__(self, data: dict):
        self.data = data

    @classmethod
    def new(
        cls,
        kind: str,
        master_seed: int,
        config_digest: str,
        config_snapshot: dict,
        backend: str,
        order: Sequence[str],
        ingest_skips: Optional[list] = None,
    ) -> "RunManifest":
        return cls(
            {
                "kind": kind,
                "run_id": uuid.uuid4().hex,
                "master_seed": master_seed,
                "config_digest": config_digest,
                "config": config_snapshot,
                "backend": backend,
                "order": list(order),
                "items": {},
                "ingest_skips": list(ingest_skips or []),
            }
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def save(self, path: str | Path) -> None:
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, ensure_ascii=False, indent=None, sort_keys=True)
        os.replace(tmp, path)

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def config_digest(self) -> str:
        return self.data["config_digest"]

    @property
    def order(self) -> list[str]:
        return self.data["order"]

    @property
    def items(self) -> dict:
        return self.data["items"]

    def mark_done(self, item_id: str, record: dict, **extra) -> None:
        self.items[item_id] = {
            "status": "done",
            "record": record,
            "completed_at": time.time(),
            **extra,
        }

    def mark_skipped(self, item_id: str, error_class: str, message: str) -> None:
        self.items[item_id] = {
            "status": "skipped",
            "error_class": error_class,
            "message": message,
            "completed_at": time.time(),
        }

    def pending_ids(self) -> list[str]:
        return [i for i in self.order if self.items.get(i, {}).get("status") != "done"]

    def summary(self) -> dict:
        done = [v for v in self.items.values() if v.get("status") == "done"]
        skipped = [v for v in self.items.values() if v.get("status") == "skipped"]
        counts = {"total": len(self.order), "done": len(done), "skipped": len(skipped)}
        if self.kind == "preference":
            provs = [d["record"]["provenance"]["type"] for d in done]
            counts["bad_prompt"] = sum(1 for p in provs if p == "bad_prompt")
            counts["corruption"] = sum(1 for p in provs if p == "corruption")
        return counts

    def emit_dataset(self, out_path: str | Path) -> int:
        """Write done records as canonical JSON lines in input order."""
        n = 0
        tmp = Path(str(out_path) + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for item_id in self.order:
                item = self.items.get(item_id)
                if item and item.get("status") == "done":
                    fh.write(canonical_json(item["record"]))
                    fh.write("\n")
                    n += 1
        os.replace(tmp, out_path)
        return n


def manifest_path(out_path: str | Path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def _flat_diff(old: dict, new: dict, prefix: str = "") -> list[str]:
    lines = []
    for key in sorted(set(old) | set(new)):
        a, b = old.get(key), new.get(key)
        label = f"{prefix}{key}"
        if isinstance(a, dict) and isinstance(b, dict):
            lines.extend(_flat_diff(a, b, label + "."))
        elif a != b:
            lines.append(f"{label}: {a!r} -> {b!r}")
    return lines


def load_resume_manifest(
    out_path: str | Path, expected_digest: str, config_snapshot: dict
) -> Optional[RunManifest]:
    """Manifest for out_path if one exists; refuses a digest mismatch."""
    mpath = manifest_path(out_path)
    if not mpath.exists():
        return None
    manifest = RunManifest.load(mpath)
    if manifest.config_digest != expected_digest:
        diff = _flat_diff(manifest.data.get("config", {}), config_snapshot)
        detail = "; ".join(diff) if diff else "run inputs changed"
        raise ManifestMismatch(
            f"manifest {mpath} was created under a different configuration: {detail}"
        )
    return manifest


# ---------------------------------------------------------------------------
# shared worker-pool driver
# ---------------------------------------------------------------------------


def _drive(
    manifest: RunManifest,
    mpath: Path,
    worker: Callable[[str], tuple[dict, dict]],
    max_workers: int,
) -> None:
    """Run worker over pending items, persisting the manifest after each.

    Per-item generation failures become skip entries; authentication
    failures and unexpected exceptions abort the run (manifest stays
    consistent, so the run can resume).
    """
    todo = manifest.pending_ids()
    lock = threading.Lock()
    abort: Optional[BaseException] = None
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(worker, item_id): item_id for item_id in todo}
        for fut in as_completed(futures):
            item_id = futures[fut]
            try:
                record, extra = fut.result()
                with lock:
                    manifest.mark_done(item_id, record, **extra)
                    manifest.save(mpath)
            except AuthenticationFailure as exc:
                abort = exc
                break
            except GenerationError as exc:
                logger.warning("item %s skipped: %s", item_id, exc)
                with lock:
                    manifest.mark_skipped(item_id, type(exc).__name__, str(exc))
                    manifest.save(mpath)
            except Exception as exc:
                abort = exc
                break
        if abort is not None:
            pool.shutdown(cancel_futures=True)
    if abort is not None:
        manifest.save(mpath)
        raise abort


def _check_skip_rate(manifest: RunManifest) -> None:
    counts = manifest.summary()
    if counts["total"] and counts["skipped"] / counts["total"] > SKIP_RATE_LIMIT:
        raise SkipRateExceeded(
            f"{counts['skipped']}/{counts['total']} items failed "
            f"(limit {SKIP_RATE_LIMIT:.0%}); manifest retained for resume"
        )


# ---------------------------------------------------------------------------
# stage one: preference dataset
# ---------------------------------------------------------------------------


def build_preference_dataset(
    images: Sequence[ImageRecord],
    out_path: str | Path,
    client,
    registry: PromptRegistry,
    seed: int,
    *,
    config_digest: str,
    config_snapshot: dict,
    backend: str,
    lowres_factor: float = DEFAULT_LOWRES_FACTOR,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    max_workers: int = 4,
    resume_manifest: Optional[RunManifest] = None,
    ingest_skips: Optional[list] = None,
) -> tuple[Path, RunManifest]:
    """Build the image-description preference dataset (JSONL + manifest)."""
    if not images:
        raise ValueError("image list must be non-empty")
    order = [rec.image_id for rec in images]
    by_id = {rec.image_id: rec for rec in images}
    if resume_manifest is not None:
        if resume_manifest.order != order:
            raise ManifestMismatch("input image ordering differs from the stored run")
        manifest = resume_manifest
    else:
        manifest = RunManifest.new(
            kind="preference",
            master_seed=seed,
            config_digest=config_digest,
            config_snapshot=config_snapshot,
            backend=backend,
            order=order,
            ingest_skips=ingest_skips,
        )
    index_of = {image_id: i for i, image_id in enumerate(order)}

    branch_rng = SeededRng(seed, "pref.branch")
    caption_rng = SeededRng(seed, "pref.caption")
    bad_rng = SeededRng(seed, "pref.bad_prompt")
    corrupt_rng = SeededRng(seed, "pref.corruption")
    seed_pref_rng = SeededRng(seed, "pref.gen_preferred")
    seed_dis_rng = SeededRng(seed, "pref.gen_dispreferred")
    good = registry.good_prompt()

    def worker(image_id: str) -> tuple[dict, dict]:
        i = index_of[image_id]
        rec = by_id[image_id]
        try:
            clean = load_image(rec.path)
        except OSError as exc:
            raise GenerationError(f"image decode failed for {rec.path}: {exc}") from exc
        training_prompt = registry.sample_caption_prompt(caption_rng.at(i))
        preferred = client.generate(
            GenerationRequest(
                prompt=good.text,
                image=clean,
                max_tokens=max_tokens,
                temperature=temperature,
                seed=seed_pref_rng.at(i).next_uint() >> 1,
            )
        )
        coin = branch_rng.at(i).next_unit()
        dis_seed = seed_dis_rng.at(i).next_uint() >> 1
        if coin < 0.5:
            bad = registry.sample_bad_prompt(bad_rng.at(i))
            dispreferred = client.generate(
                GenerationRequest(
                    prompt=bad.text,
                    image=clean,
                    max_tokens=max_tokens,
                    temperature=temperature,
                    seed=dis_seed,
                )
            )
            provenance = {"type": "bad_prompt", "prompt_id": bad.id}
        else:
            spec = sample_corruption(corrupt_rng.at(i), lowres_factor)
            corrupted = apply_corruption(clean, spec)
            dispreferred = client.generate(
                GenerationRequest(
                    prompt=training_prompt.text,
                    image=corrupted,
                    max_tokens=max_tokens,
                    temperature=temperature,
                    seed=dis_seed,
                )
            )
            provenance = {"type": "corruption", **spec.to_dict()}
        if preferred.text == dispreferred.text:
            raise DegeneratePair(f"identical generations for image {image_id}")
        record = {
            "image": image_id,
            "prompt": training_prompt.text,
            "chosen": preferred.text,
            "rejected": dispreferred.text,
            "provenance": provenance,
            "meta": {
                "model_id": preferred.model_id,
                "temperature": temperature,
                "max_tokens": max_tokens,
            },
        }
        return record, {"branch_coin": coin}

    mpath = manifest_path(out_path)
    manifest.save(mpath)
    _drive(manifest, mpath, worker, max_workers)
    _check_skip_rate(manifest)
    manifest.emit_dataset(out_path)
    manifest.save(mpath)
    return Path(out_path), manifest


# ---------------------------------------------------------------------------
# stage two: description-infused dataset
# ---------------------------------------------------------------------------


def select_infusion_subset(sft_records: Sequence[SftRecord], subset_size: int, seed: int) -> list[int]:
    """Seeded uniform subsample (without replacement) of rows that carry an
    image, returned as original indices in ascending order."""
    pool = [i for i, rec in enumerate(sft_records) if rec.image_ref]
    if subset_size < 1:
        raise ValueError(f"subset size must be >= 1, got {subset_size}")
    if subset_size > len(pool):
        raise ValueError(
            f"subset size {subset_size} exceeds the {len(pool)} image-bearing sft rows"
        )
    rank_rng = SeededRng(seed, "infuse.subsample")
    ranked = sorted(pool, key=lambda i: (rank_rng.at(i).next_unit(), i))
    return sorted(ranked[:subset_size])


def build_infused_dataset(
    sft_records: Sequence[SftRecord],
    subset_size: int,
    images_root: str | Path,
    out_path: str | Path,
    client,
    registry: PromptRegistry,
    seed: int,
    *,
    config_digest: str,
    config_snapshot: dict,
    backend: str,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    max_workers: int = 4,
    resume_manifest: Optional[RunManifest] = None,
) -> tuple[Path, RunManifest]:
    """Build the description-infused instruction dataset (JSONL + manifest)."""
    selected = select_infusion_subset(sft_records, subset_size, seed)
    order = [sft_records[i].sft_id for i in selected]
    if len(set(order)) != len(order):
        raise ValueError("sft ids must be unique")
    index_by_sft = {sft_records[i].sft_id: i for i in selected}
    images_root = Path(images_root)

    if resume_manifest is not None:
        if resume_manifest.order != order:
            raise ManifestMismatch("selected sft subset differs from the stored run")
        manifest = resume_manifest
    else:
        manifest = RunManifest.new(
            kind="infused",
            master_seed=seed,
            config_digest=config_digest,
            config_snapshot=config_snapshot,
            backend=backend,
            order=order,
        )

    describe_rng = SeededRng(seed, "infuse.describe")
    gen_rng = SeededRng(seed, "infuse.gen")

    def worker(sft_id: str) -> tuple[dict, dict]:
        idx = index_by_sft[sft_id]
        rec = sft_records[idx]
        image_path = images_root / rec.image_ref
        if not image_path.is_file():
            raise GenerationError(f"missing image file {image_path}")
        try:
            image = load_image(image_path)
        except OSError as exc:
            raise GenerationError(f"image decode failed for {image_path}: {exc}") from exc
        describe = registry.sample_describe_prompt(describe_rng.at(idx))
        description = client.generate(
            GenerationRequest(
                prompt=describe.text,
                image=image,
                max_tokens=max_tokens,
                temperature=temperature,
                seed=gen_rng.at(idx).next_uint() >> 1,
            )
        ).text
        record = {
            "id": rec.sft_id,
            "image": rec.image_ref,
            "prompt": compose_infused_prompt(description, rec.first_instruction()),
            "completion": rec.first_completion(),
            "description": description,
        }
        return record, {"describe_prompt_id": describe.id}

    mpath = manifest_path(out_path)
    manifest.save(mpath)
    _drive(manifest, mpath, worker, max_workers)
    _check_skip_rate(manifest)
    manifest.emit_dataset(out_path)
    manifest.save(mpath)
    return Path(out_path), manifest


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    path: str
    schema: str
    lines: int = 0
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "schema": self.schema,
            "lines": self.lines,
            "ok": self.ok,
            "violations": [{"line": n, "message": m} for n, m in self.violations],
        }


def _check_preference_line(obj: dict, complain) -> None:
    for key in _PREF_FIELDS:
        if key not in obj:
            complain(f"missing field {key!r}")
    for key in ("image", "prompt", "chosen", "rejected"):
        if key in obj and (not isinstance(obj[key], str) or not obj[key]):
            complain(f"field {key!r} must be a non-empty string")
    if isinstance(obj.get("chosen"), str) and obj.get("chosen") == obj.get("rejected"):
        complain("chosen and rejected are identical")
    prov = obj.get("provenance")
    if prov is not None:
        if not isinstance(prov, dict) or prov.get("type") not in ("bad_prompt", "corruption"):
            complain("provenance.type must be 'bad_prompt' or 'corruption'")
        elif prov["type"] == "bad_prompt":
            if "prompt_id" not in prov:
                complain("bad_prompt provenance must carry prompt_id")
        else:
            mode = prov.get("mode")
            if mode == "lowres":
                if "factor" not in prov:
                    complain("lowres provenance must carry factor")
            elif mode == "jitter":
                for p in ("hue_shift_deg", "sat_scale", "bright_scale", "contrast_scale"):
                    if p not in prov:
                        complain(f"jitter provenance must carry {p}")
            else:
                complain("corruption provenance mode must be 'lowres' or 'jitter'")


def _check_infused_line(obj: dict, complain) -> None:
    for key in _INFUSED_FIELDS:
        if key not in obj:
            complain(f"missing field {key!r}")
    for key in ("id", "image", "prompt", "completion", "description"):
        if key in obj and not isinstance(obj[key], str):
            complain(f"field {key!r} must be a string")
    prompt, desc = obj.get("prompt"), obj.get("description")
    if isinstance(prompt, str) and isinstance(desc, str):
        if not prompt.startswith(f"{INFUSION_PREFIX}{desc}\n"):
            complain("prompt does not start with the exact infusion template")


def validate_dataset(path: str | Path, schema: str) -> ValidationReport:
    """Check a dataset file line by line against its declared schema."""
    if schema not in ("preference", "infused"):
        raise ValueError(f"unknown schema {schema!r}")
    report = ValidationReport(path=str(path), schema=schema)
    checker = _check_preference_line if schema == "preference" else _check_infused_line
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            report.lines += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.violations.append((line_no, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(obj, dict):
                report.violations.append((line_no, "line is not a JSON object"))
                continue
            checker(obj, lambda msg, n=line_no: report.violations.append((n, msg)))
    return report
