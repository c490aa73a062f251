from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

REPO_ROOT = Path(__file__).resolve().parents[2]
SHARED_FIXTURE = REPO_ROOT / "fixtures" / "preference_logprobs_100.jsonl"


def run_stic(*args: str) -> subprocess.CompletedProcess:
    """Invoke the data-factory CLI exactly as an external consumer would."""
    return subprocess.run(
        [sys.executable, "-m", "stic.cli", *args], capture_output=True, text=True
    )


def _make_images(root: Path, count: int) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)
    for i in range(count):
        arr = rng.integers(0, 256, size=(12, 16, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(root / f"img_{i:04d}.png")
    return root


@pytest.fixture(scope="session")
def pref64(tmp_path_factory) -> Path:
    """64 mock preference records produced by the factory CLI."""
    base = tmp_path_factory.mktemp("pref64")
    images = _make_images(base / "imgs", 64)
    out = base / "pref.jsonl"
    proc = run_stic(
        "build-pref", "--images", str(images), "--out", str(out),
        "--mock", "--count", "64", "--seed", "7",
    )
    assert proc.returncode == 0, proc.stderr
    return out


@pytest.fixture(scope="session")
def infused64(tmp_path_factory) -> Path:
    """64 mock infused records produced by the factory CLI."""
    base = tmp_path_factory.mktemp("infused64")
    images = _make_images(base / "imgs", 16)
    sft = base / "sft.jsonl"
    with open(sft, "w", encoding="utf-8") as fh:
        for i in range(80):
            fh.write(
                json.dumps(
                    {
                        "id": f"sft-{i:04d}",
                        "image": f"img_{i % 16:04d}.png",
                        "conversations": [
                            {"from": "human", "value": f"<image>\nDescribe scene {i}."},
                            {"from": "gpt", "value": f"Ground truth answer {i}."},
                        ],
                    }
                )
                + "\n"
            )
    out = base / "infused.jsonl"
    proc = run_stic(
        "build-infuse", "--sft", str(sft), "--images-root", str(images),
        "--out", str(out), "--subset", "64", "--mock", "--seed", "7",
    )
    assert proc.returncode == 0, proc.stderr
    return out
