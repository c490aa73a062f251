"""Multimodal generation client for OpenAI-compatible chat-completions
endpoints, plus a deterministic offline mock backend.

The real client is the package's only networking surface: it serializes an
optional image as a base64 PNG data URI inside the vision message schema,
retries transient failures with exponential backoff and jitter, and caps
in-flight requests with a semaphore. The mock backend is a pure function of
(seed, image digest, prompt digest) and makes every pipeline test hermetic.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import httpx

from .corruption import ImageBuffer
from .imagefiles import encode_png
from .prompts import PromptRegistry, compose_infused_prompt
from .seeding import SeededRng

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 1024


class GenerationError(Exception):
    """Base class for generation failures."""


class TransportFailure(GenerationError):
    """Network or server failure that survived the retry budget."""


class AuthenticationFailure(GenerationError):
    """The endpoint rejected our credentials; retrying cannot help."""


class MalformedResponse(GenerationError):
    """The endpoint answered but not in the expected schema."""


class OversizedImage(GenerationError):
    """Encoded image exceeds the configured byte limit."""


class StageError(GenerationError):
    """A describe-then-respond call failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"{stage} stage failed: {cause}")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    api_key: Optional[str] = None
    model: str = "default"
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrency: int = 4
    retry_backoff: float = 0.5
    max_image_bytes: int = 8_000_000

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_concurrency < 1:
            raise ValueError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    image: Optional[ImageBuffer] = None
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    seed: Optional[int] = None
    want_logprobs: bool = False

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    model_id: str
    latency_ms: float
    token_logprobs: Optional[tuple[tuple[str, float], ...]] = None

    def __post_init__(self):
        if self.token_logprobs is not None:
            for tok, lp in self.token_logprobs:
                if lp > 0:
                    raise ValueError(f"token log-prob for {tok!r} must be <= 0, got {lp}")


_RETRY_STATUSES = {408, 429, 500, 502, 503, 504}
_AUTH_STATUSES = {401, 403}


def _image_data_uri(buf: ImageBuffer, byte_limit: int) -> str:
    png = encode_png(buf)
    if len(png) > byte_limit:
        raise OversizedImage(f"encoded image is {len(png)} bytes, limit {byte_limit}")
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


class ChatCompletionsClient:
    """Blocking client for {base_url}/chat/completions with bounded concurrency.

    Safe to share across worker threads; a transport can be injected for
    hermetic tests.
    """

    def __init__(self, cfg: EndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        self.cfg = cfg
        self._semaphore = threading.BoundedSemaphore(cfg.max_concurrency)
        headers = {}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            base_url=cfg.base_url.rstrip("/"),
            headers=headers,
            timeout=cfg.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def _build_body(self, req: GenerationRequest) -> dict:
        content: list[dict] = [{"type": "text", "text": req.prompt}]
        if req.image is not None:
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": _image_data_uri(req.image, self.cfg.max_image_bytes)},
                }
            )
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        if req.want_logprobs:
            body["logprobs"] = True
        return body

    def generate(self, req: GenerationRequest) -> GenerationResult:
        body = self._build_body(req)
        prompt_digest = hashlib.sha256(req.prompt.encode("utf-8")).hexdigest()[:12]
        logger.debug(
            "request model=%s max_tokens=%d temperature=%s seed=%s image=%s prompt=%r",
            self.cfg.model, req.max_tokens, req.temperature, req.seed,
            "<elided>" if req.image is not None else None, req.prompt,
        )
        attempts = self.cfg.max_retries + 1
        last_error: Optional[Exception] = None
        start = time.monotonic()
        for attempt in range(attempts):
            if attempt > 0:
                delay = self.cfg.retry_backoff * (2 ** (attempt - 1))
                time.sleep(delay * (1.0 + 0.25 * random.random()))
            try:
                with self._semaphore:
                    response = self._http.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning(
                    "generate attempt %d/%d transport error (prompt %s): %s",
                    attempt + 1, attempts, prompt_digest, exc,
                )
                continue
            if response.status_code in _AUTH_STATUSES:
                raise AuthenticationFailure(
                    f"endpoint returned {response.status_code} for prompt {prompt_digest}"
                )
            if response.status_code in _RETRY_STATUSES:
                last_error = TransportFailure(f"status {response.status_code}")
                logger.warning(
                    "generate attempt %d/%d got status %d (prompt %s)",
                    attempt + 1, attempts, response.status_code, prompt_digest,
                )
                continue
            if response.status_code != 200:
                raise TransportFailure(
                    f"endpoint returned non-retryable status {response.status_code}"
                )
            latency_ms = (time.monotonic() - start) * 1000.0
            result = self._parse_response(response, latency_ms)
            logger.info(
                "generate ok (prompt %s, image=%s, %d chars, %.0f ms)",
                prompt_digest, req.image is not None, len(result.text), latency_ms,
            )
            logger.debug("response model=%s text=%r", result.model_id, result.text)
            return result
        raise TransportFailure(f"giving up after {attempts} attempts: {last_error}")

    def _parse_response(self, response: httpx.Response, latency_ms: float) -> GenerationResult:
        try:
            data = response.json()
        except ValueError as exc:
            raise MalformedResponse(f"response body is not JSON: {exc}") from exc
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"missing completion content: {exc!r}") from exc
        if not isinstance(text, str):
            raise MalformedResponse(f"completion content is {type(text).__name__}, not str")
        token_logprobs = None
        logprob_block = choice.get("logprobs")
        if isinstance(logprob_block, dict) and isinstance(logprob_block.get("content"), list):
            # Clamp stray positive values; the schema promises log-probs <= 0.
            token_logprobs = tuple(
                (str(item.get("token", "")), min(0.0, float(item.get("logprob", 0.0))))
                for item in logprob_block["content"]
            )
        return GenerationResult(
            text=text,
            model_id=str(data.get("model", self.cfg.model)),
            latency_ms=latency_ms,
            token_logprobs=token_logprobs,
        )


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


_MOCK_SUBJECTS = (
    "a cyclist", "two dogs", "a market stall", "a sailboat",
    "a violinist", "stacked crates", "a mural", "a lighthouse",
)
_MOCK_SETTINGS = (
    "near a harbor", "in a tiled kitchen", "under neon signs", "on a gravel road",
    "beside a greenhouse", "in morning fog", "at a train platform", "on a rooftop",
)
_MOCK_MOODS = (
    "calm", "bustling", "washed-out", "overcast", "sunlit", "cluttered", "quiet", "festive",
)


def image_digest(buf: Optional[ImageBuffer]) -> str:
    if buf is None:
        return _digest(b"no-image")
    header = f"{buf.width}x{buf.height}:".encode("ascii")
    return _digest(header + buf.pixels)


def mock_generate(seed: int, req: GenerationRequest) -> GenerationResult:
    """Deterministic pseudo-generation embedding the image and prompt digests."""
    img_d = image_digest(req.image)[:12]
    prm_d = _digest(req.prompt.encode("utf-8"))[:12]
    stamp = _digest(f"{seed}:{req.seed}:{img_d}:{prm_d}".encode("ascii"))
    picks = stamp.encode("ascii")
    text = (
        f"Mock description {stamp[:12]}: {_MOCK_SUBJECTS[picks[0] % 8]} "
        f"{_MOCK_SETTINGS[picks[1] % 8]}, {_MOCK_MOODS[picks[2] % 8]} overall. "
        f"[image {img_d}] [prompt {prm_d}]"
    )
    token_logprobs = None
    if req.want_logprobs:
        token_logprobs = tuple(
            (tok, -((picks[3 + i] % 192) + 1) / 64.0)
            for i, tok in enumerate(text.split()[:8])
        )
    return GenerationResult(
        text=text, model_id="mock-vlm", latency_ms=0.0, token_logprobs=token_logprobs
    )


@dataclass
class MockBackend:
    """In-process stand-in for the endpoint; counts calls for tests."""

    seed: int = 0
    calls: int = field(default=0, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def generate(self, req: GenerationRequest) -> GenerationResult:
        with self._lock:
            self.calls += 1
        result = mock_generate(self.seed, req)
        logger.debug(
            "mock request image=%s prompt=%r -> %r",
            "<elided>" if req.image is not None else None, req.prompt, result.text,
        )
        return result


def describe_then_respond(
    client,
    image: ImageBuffer,
    question: str,
    rng: SeededRng,
    registry: Optional[PromptRegistry] = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[str, str]:
    """Two-step inference: describe the image, then answer with the
    description prepended to the question (image re-sent on both calls)."""
    if not question:
        raise ValueError("question must be non-empty")
    registry = registry or PromptRegistry.defaults()
    describe_prompt = registry.sample_describe_prompt(rng)
    seed_a = rng.next_uint() >> 1
    seed_b = rng.next_uint() >> 1
    try:
        description = client.generate(
            GenerationRequest(
                prompt=describe_prompt.text,
                image=image,
                max_tokens=max_tokens,
                temperature=temperature,
                seed=seed_a,
            )
        ).text
    except GenerationError as exc:
        raise StageError("describe", exc) from exc
    try:
        answer = client.generate(
            GenerationRequest(
                prompt=compose_infused_prompt(description, question),
                image=image,
                max_tokens=max_tokens,
                temperature=temperature,
                seed=seed_b,
            )
        ).text
    except GenerationError as exc:
        raise StageError("respond", exc) from exc
    return description, answer
