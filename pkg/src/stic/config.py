"""Run configuration: TOML file loading, environment overrides, and the
stable config digest that gates resumption.

The digest covers every behavior-affecting field plus the run's inputs, so
a manifest can refuse to resume under a different configuration.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .genclient import EndpointConfig

API_KEY_ENV = "STIC_API_KEY"
BASE_URL_ENV = "STIC_BASE_URL"
SERVICE_URL_ENV = "STIC_SERVICE_URL"


def parse_alpha(value) -> Fraction:
    """Regularization weight from a fraction string ("1/1024"), decimal
    string, or number; kept exact as a rational until use."""
    if isinstance(value, Fraction):
        out = value
    elif isinstance(value, str):
        try:
            out = Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse alpha from {value!r}: {exc}") from exc
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        out = Fraction(value).limit_denominator(10**12)
    else:
        raise ValueError(f"cannot parse alpha from {value!r}")
    if out < 0:
        raise ValueError(f"alpha must be >= 0, got {out}")
    return out


@dataclass(frozen=True)
class DecodingDefaults:
    temperature: float = 0.7
    max_tokens: int = 1024


@dataclass(frozen=True)
class CorruptionDefaults:
    lowres_factor: float = 0.125


@dataclass(frozen=True)
class LossDefaults:
    # lam is a conventional preference-loss temperature, not a reported value.
    lam: float = 0.1
    alpha: str = "1/1024"


@dataclass(frozen=True)
class TrainerDefaults:
    """Fine-tuning defaults re-exported for the toy trainer package."""

    learning_rate: float = 1e-7
    optimizer: str = "adamw"
    global_batch_size: int = 4
    epochs: int = 1
    lora_r: int = 128
    lora_alpha: int = 256
    warmup_ratio: float = 0.03
    lr_scheduler: str = "cosine"
    weight_decay: float = 0.0
    model_max_length: int = 1024
    sft_learning_rate: float = 2e-5
    sft_global_batch_size: int = 64


@dataclass(frozen=True)
class RunConfig:
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    decoding: DecodingDefaults = field(default_factory=DecodingDefaults)
    corruption: CorruptionDefaults = field(default_factory=CorruptionDefaults)
    loss: LossDefaults = field(default_factory=LossDefaults)
    trainer: TrainerDefaults = field(default_factory=TrainerDefaults)
    seed: int = 0
    prompts_path: Optional[str] = None
    preference_count: int = 6000
    infuse_subset: int = 5000

    def alpha_fraction(self) -> Fraction:
        return parse_alpha(self.loss.alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        # The key itself must never enter digests or logs.
        d["endpoint"].pop("api_key", None)
        return d


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_payload(cfg: RunConfig, **run_inputs) -> dict:
    """Everything the run digest covers: resolved config + input bindings."""
    return {"config": cfg.to_dict(), "inputs": dict(sorted(run_inputs.items()))}


def run_digest(cfg: RunConfig, **run_inputs) -> str:
    """Stable hash over the resolved config and the run's input bindings."""
    payload = digest_payload(cfg, **run_inputs)
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ValueError(f"config section [{name}] must be a table")
    return value


def load_run_config(path: Optional[str | Path] = None, env: Optional[dict] = None) -> RunConfig:
    """RunConfig from an optional TOML file, with env-var overrides applied."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)

    ep = _section(data, "endpoint")
    endpoint = EndpointConfig(
        base_url=env.get(BASE_URL_ENV) or ep.get("base_url", EndpointConfig.base_url),
        api_key=env.get(API_KEY_ENV) or ep.get("api_key"),
        model=ep.get("model", EndpointConfig.model),
        timeout=float(ep.get("timeout", EndpointConfig.timeout)),
        max_retries=int(ep.get("max_retries", EndpointConfig.max_retries)),
        max_concurrency=int(ep.get("max_concurrency", EndpointConfig.max_concurrency)),
        retry_backoff=float(ep.get("retry_backoff", EndpointConfig.retry_backoff)),
        max_image_bytes=int(ep.get("max_image_bytes", EndpointConfig.max_image_bytes)),
    )
    dec = _section(data, "decoding")
    decoding = DecodingDefaults(
        temperature=float(dec.get("temperature", DecodingDefaults.temperature)),
        max_tokens=int(dec.get("max_tokens", DecodingDefaults.max_tokens)),
    )
    cor = _section(data, "corruption")
    corruption = CorruptionDefaults(
        lowres_factor=float(cor.get("lowres_factor", CorruptionDefaults.lowres_factor)),
    )
    loss_raw = _section(data, "loss")
    loss = LossDefaults(
        lam=float(loss_raw.get("lambda", LossDefaults.lam)),
        alpha=str(loss_raw.get("alpha", LossDefaults.alpha)),
    )
    parse_alpha(loss.alpha)  # fail fast on a bad config value
    tr = _section(data, "trainer")
    defaults = TrainerDefaults()
    trainer = TrainerDefaults(
        learning_rate=float(tr.get("learning_rate", defaults.learning_rate)),
        optimizer=str(tr.get("optimizer", defaults.optimizer)),
        global_batch_size=int(tr.get("global_batch_size", defaults.global_batch_size)),
        epochs=int(tr.get("epochs", defaults.epochs)),
        lora_r=int(tr.get("lora_r", defaults.lora_r)),
        lora_alpha=int(tr.get("lora_alpha", defaults.lora_alpha)),
        warmup_ratio=float(tr.get("warmup_ratio", defaults.warmup_ratio)),
        lr_scheduler=str(tr.get("lr_scheduler", defaults.lr_scheduler)),
        weight_decay=float(tr.get("weight_decay", defaults.weight_decay)),
        model_max_length=int(tr.get("model_max_length", defaults.model_max_length)),
        sft_learning_rate=float(tr.get("sft_learning_rate", defaults.sft_learning_rate)),
        sft_global_batch_size=int(tr.get("sft_global_batch_size", defaults.sft_global_batch_size)),
    )
    return RunConfig(
        endpoint=endpoint,
        decoding=decoding,
        corruption=corruption,
        loss=loss,
        trainer=trainer,
        seed=int(data.get("seed", 0)),
        prompts_path=data.get("prompts_path"),
        preference_count=int(data.get("preference_count", RunConfig.preference_count)),
        infuse_subset=int(data.get("infuse_subset", RunConfig.infuse_subset)),
    )


def config_from_dict(d: dict) -> RunConfig:
    """Rebuild a RunConfig from its to_dict() form (service wire format)."""
    ep = d.get("endpoint", {})
    return RunConfig(
        endpoint=EndpointConfig(**{k: v for k, v in ep.items() if k != "api_key"},
                                api_key=os.environ.get(API_KEY_ENV)),
        decoding=DecodingDefaults(**d.get("decoding", {})),
        corruption=CorruptionDefaults(**d.get("corruption", {})),
        loss=LossDefaults(**d.get("loss", {})),
        trainer=TrainerDefaults(**d.get("trainer", {})),
        seed=int(d.get("seed", 0)),
        prompts_path=d.get("prompts_path"),
        preference_count=int(d.get("preference_count", RunConfig.preference_count)),
        infuse_subset=int(d.get("infuse_subset", RunConfig.infuse_subset)),
    )
