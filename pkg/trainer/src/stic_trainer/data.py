"""Byte-level tokenization of the factory's JSONL datasets.

The toy model is text-only: an image reference is replaced by a short
digest token prefix on the prompt, which preserves the pairing between a
record and its image without needing a vision tower.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

PAD_ID = 0
BOS_ID = 1
VOCAB_SIZE = 258  # pad + bos + 256 byte values


def encode_text(text: str, max_len: int) -> list[int]:
    data = text.encode("utf-8")[:max_len]
    return [b + 2 for b in data]


def image_prefix(image_ref: str) -> str:
    digest = hashlib.sha256(image_ref.encode("utf-8")).hexdigest()[:8]
    return f"[img {digest}] "


@dataclass(frozen=True)
class PreferencePair:
    pair_id: str
    prompt_ids: tuple[int, ...]
    chosen_ids: tuple[int, ...]
    rejected_ids: tuple[int, ...]


@dataclass(frozen=True)
class SftExample:
    example_id: str
    prompt_ids: tuple[int, ...]
    completion_ids: tuple[int, ...]


def load_preference_pairs(path, max_len: int = 1024) -> list[PreferencePair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                prompt = image_prefix(obj["image"]) + obj["prompt"]
                pairs.append(
                    PreferencePair(
                        pair_id=str(obj.get("image", line_no)),
                        prompt_ids=tuple(encode_text(prompt, max_len)),
                        chosen_ids=tuple(encode_text(obj["chosen"], max_len)),
                        rejected_ids=tuple(encode_text(obj["rejected"], max_len)),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"preference file line {line_no}: missing field {exc}") from exc
    return pairs


def load_sft_examples(path, max_len: int = 1024) -> list[SftExample]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                prompt = obj["prompt"]
                if obj.get("image"):
                    prompt = image_prefix(obj["image"]) + prompt
                examples.append(
                    SftExample(
                        example_id=str(obj.get("id", line_no)),
                        prompt_ids=tuple(encode_text(prompt, max_len)),
                        completion_ids=tuple(encode_text(obj["completion"], max_len)),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"infused file line {line_no}: missing field {exc}") from exc
    return examples
