"""Deterministic image corruption operators.

Two corruption modes produce the degraded inputs used for dispreferred
generations: low-resolution degradation (bilinear downscale with an 8-pixel
floor, nearest-neighbor upscale back to the original size, preserving the
blocky look) and color jitter (brightness, contrast about 127.5, then
saturation scale and hue rotation in HSV space).

All arithmetic is float64 with a single quantization at each stage boundary
(ties round half away from zero), so equal (input, spec) pairs give
byte-identical outputs on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .seeding import SeededRng

DEFAULT_LOWRES_FACTOR = 0.125
LOWRES_SIDE_FLOOR = 8

HUE_RANGE = (-180.0, 180.0)
SCALE_RANGE = (0.2, 1.8)


class ParameterRangeError(ValueError):
    """A corruption parameter is outside its declared range."""


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major 8-bit RGB image."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        expected = self.width * self.height * 3
        if len(self.pixels) != expected:
            raise ValueError(
                f"pixel buffer has {len(self.pixels)} bytes, expected {expected} "
                f"for {self.width}x{self.height} RGB"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an (h, w, 3) array, got shape {arr.shape}")
        h, w, _ = arr.shape
        return cls(width=w, height=h, pixels=arr.tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)


@dataclass(frozen=True)
class LowRes:
    factor: float

    def __post_init__(self):
        if not (0.0 < self.factor <= 1.0):
            raise ParameterRangeError(f"lowres factor must be in (0, 1], got {self.factor}")


@dataclass(frozen=True)
class ColorJitter:
    hue_shift_deg: float
    sat_scale: float
    bright_scale: float
    contrast_scale: float

    def __post_init__(self):
        if not HUE_RANGE[0] <= self.hue_shift_deg <= HUE_RANGE[1]:
            raise ParameterRangeError(
                f"hue_shift_deg must be in [{HUE_RANGE[0]}, {HUE_RANGE[1]}], got {self.hue_shift_deg}"
            )
        for name in ("sat_scale", "bright_scale", "contrast_scale"):
            v = getattr(self, name)
            if not SCALE_RANGE[0] <= v <= SCALE_RANGE[1]:
                raise ParameterRangeError(
                    f"{name} must be in [{SCALE_RANGE[0]}, {SCALE_RANGE[1]}], got {v}"
                )


@dataclass(frozen=True)
class CorruptionSpec:
    mode: Union[LowRes, ColorJitter]
    seed: int

    def to_dict(self) -> dict:
        if isinstance(self.mode, LowRes):
            return {"mode": "lowres", "factor": self.mode.factor, "seed": self.seed}
        return {
            "mode": "jitter",
            "hue_shift_deg": self.mode.hue_shift_deg,
            "sat_scale": self.mode.sat_scale,
            "bright_scale": self.mode.bright_scale,
            "contrast_scale": self.mode.contrast_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        mode = d.get("mode")
        if mode == "lowres":
            return cls(mode=LowRes(factor=d["factor"]), seed=int(d.get("seed", 0)))
        if mode == "jitter":
            return cls(
                mode=ColorJitter(
                    hue_shift_deg=d["hue_shift_deg"],
                    sat_scale=d["sat_scale"],
                    bright_scale=d["bright_scale"],
                    contrast_scale=d["contrast_scale"],
                ),
                seed=int(d.get("seed", 0)),
            )
        raise ValueError(f"unknown corruption mode {mode!r}")


def _quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round ties half away from zero (values >= 0)."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def _target_side(side: int, factor: float) -> int:
    return min(side, max(LOWRES_SIDE_FLOOR, int(side * factor + 0.5)))


def _bilinear_downscale(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w, _ = arr.shape
    src = arr.astype(np.float64)

    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0c = np.clip(x0.astype(np.int64), 0, w - 1)
    x1c = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    y0c = np.clip(y0.astype(np.int64), 0, h - 1)
    y1c = np.clip(y0.astype(np.int64) + 1, 0, h - 1)

    fx = fx[np.newaxis, :, np.newaxis]
    fy = fy[:, np.newaxis, np.newaxis]
    p00 = src[y0c[:, None], x0c[None, :]]
    p10 = src[y0c[:, None], x1c[None, :]]
    p01 = src[y1c[:, None], x0c[None, :]]
    p11 = src[y1c[:, None], x1c[None, :]]
    top = (1.0 - fx) * p00 + fx * p10
    bot = (1.0 - fx) * p01 + fx * p11
    return _quantize((1.0 - fy) * top + fy * bot)


def _nearest_upscale(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w, _ = arr.shape
    xs = np.minimum(
        np.floor((np.arange(out_w, dtype=np.float64) + 0.5) * w / out_w).astype(np.int64), w - 1
    )
    ys = np.minimum(
        np.floor((np.arange(out_h, dtype=np.float64) + 0.5) * h / out_h).astype(np.int64), h - 1
    )
    return arr[ys[:, None], xs[None, :]]


def corrupt_lowres(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Degrade detail by downscaling and blowing back up to the input size."""
    if not (0.0 < factor <= 1.0):
        raise ParameterRangeError(f"lowres factor must be in (0, 1], got {factor}")
    if factor == 1.0:
        return img
    dw = _target_side(img.width, factor)
    dh = _target_side(img.height, factor)
    small = _bilinear_downscale(img.to_array(), dw, dh)
    big = _nearest_upscale(small, img.width, img.height)
    return ImageBuffer.from_array(big)


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    rangec = maxc - minc
    gray = rangec == 0.0
    safe_range = np.where(gray, 1.0, rangec)
    safe_max = np.where(maxc == 0.0, 1.0, maxc)
    s = np.where(gray, 0.0, rangec / safe_max)
    rc = (maxc - r) / safe_range
    gc = (maxc - g) / safe_range
    bc = (maxc - b) / safe_range
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(gray, 0.0, (h / 6.0) % 1.0)
    return h, s, maxc


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def corrupt_jitter(img: ImageBuffer, spec: CorruptionSpec) -> ImageBuffer:
    """Distort color: brightness, contrast, then saturation/hue in HSV."""
    if not isinstance(spec.mode, ColorJitter):
        raise ParameterRangeError("corrupt_jitter requires a ColorJitter spec")
    jitter = spec.mode
    v = img.to_array().astype(np.float64)
    v = np.clip(v * jitter.bright_scale, 0.0, 255.0)
    v = np.clip((v - 127.5) * jitter.contrast_scale + 127.5, 0.0, 255.0)
    h, s, val = _rgb_to_hsv(v / 255.0)
    s = np.clip(s * jitter.sat_scale, 0.0, 1.0)
    h = (h + jitter.hue_shift_deg / 360.0) % 1.0
    rgb = _hsv_to_rgb(h, s, val) * 255.0
    return ImageBuffer.from_array(_quantize(rgb))


def apply_corruption(img: ImageBuffer, spec: CorruptionSpec) -> ImageBuffer:
    if isinstance(spec.mode, LowRes):
        return corrupt_lowres(img, spec.mode.factor)
    return corrupt_jitter(img, spec)


def sample_corruption(rng: SeededRng, lowres_factor: float = DEFAULT_LOWRES_FACTOR) -> CorruptionSpec:
    """Draw a corruption: lowres or jitter with probability 1/2 each.

    The lowres factor is fixed at the configured default; jitter parameters
    are drawn uniformly from their declared ranges.
    """
    seed = rng.next_uint()
    if rng.next_unit() < 0.5:
        return CorruptionSpec(mode=LowRes(factor=lowres_factor), seed=seed)
    return CorruptionSpec(
        mode=ColorJitter(
            hue_shift_deg=rng.next_uniform(*HUE_RANGE),
            sat_scale=rng.next_uniform(*SCALE_RANGE),
            bright_scale=rng.next_uniform(*SCALE_RANGE),
            contrast_scale=rng.next_uniform(*SCALE_RANGE),
        ),
        seed=seed,
    )
