"""PNG/JPEG file and byte-level helpers around ImageBuffer."""

from __future__ import annotations

import io
from pathlib import Path

from PIL import Image

from .corruption import ImageBuffer


def load_image(path: str | Path) -> ImageBuffer:
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return ImageBuffer(width=rgb.width, height=rgb.height, pixels=rgb.tobytes())


def read_dimensions(path: str | Path) -> tuple[int, int]:
    """(width, height) from the file header without decoding pixel data."""
    with Image.open(path) as im:
        return im.width, im.height


def encode_png(buf: ImageBuffer) -> bytes:
    im = Image.frombytes("RGB", (buf.width, buf.height), buf.pixels)
    out = io.BytesIO()
    im.save(out, format="PNG")
    return out.getvalue()


def decode_image_bytes(data: bytes) -> ImageBuffer:
    with Image.open(io.BytesIO(data)) as im:
        rgb = im.convert("RGB")
        return ImageBuffer(width=rgb.width, height=rgb.height, pixels=rgb.tobytes())


def save_image(buf: ImageBuffer, path: str | Path) -> None:
    im = Image.frombytes("RGB", (buf.width, buf.height), buf.pixels)
    im.save(path)
