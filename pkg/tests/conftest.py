from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def make_image_corpus(root: Path, count: int, seed: int = 0, size=(16, 12)) -> Path:
    """Write `count` small deterministic PNGs named for stable ordering."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    w, h = size
    for i in range(count):
        arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(root / f"img_{i:04d}.png")
    return root


def make_sft_file(path: Path, count: int, text_only_every: int = 5) -> Path:
    """Conversation-style JSONL; every Nth record has no image."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(count):
            rec = {
                "id": f"sft-{i:04d}",
                "conversations": [
                    {"from": "human", "value": f"<image>\nWhat is happening in scene {i}?"},
                    {"from": "gpt", "value": f"Scene {i} shows a reference answer."},
                ],
            }
            if i % text_only_every != text_only_every - 1:
                rec["image"] = f"img_{i % 8:04d}.png"
            fh.write(json.dumps(rec) + "\n")
    return path


def checkerboard(n: int) -> bytes:
    px = bytearray()
    for y in range(n):
        for x in range(n):
            v = 0 if (x + y) % 2 == 0 else 255
            px += bytes((v, v, v))
    return bytes(px)


@pytest.fixture(scope="session")
def image_corpus(tmp_path_factory) -> Path:
    return make_image_corpus(tmp_path_factory.mktemp("corpus"), count=12)


@pytest.fixture()
def image_dir_factory(tmp_path):
    def factory(count: int, seed: int = 0) -> Path:
        return make_image_corpus(tmp_path / f"imgs_{count}_{seed}", count, seed)

    return factory
