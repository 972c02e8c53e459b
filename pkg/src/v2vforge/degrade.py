"""Model-free control-signal transforms used as cheap paired training data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import rng as rng_mod
from .affine import bilinear
from .media import MaskVideo, VideoClip
from .transitions import RegionSpec, make_border_mask, make_spatial_mask

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

_DEFAULTS = {
    "grayscale": {},
    "gaussian_blur": {"sigma": 1.5},
    "negate": {},
    "saturation": {"factor": 0.3},
    "contrast": {"factor": 0.5},
    "brightness": {"delta": 0.2},
    "pixelate": {"block": 4},
    "wave_warp": {"amp": 2.0, "period": 16.0},
    "posterize": {"levels": 4},
    "gaussian_noise": {"sigma": 0.1},
    "color_overlay": {"rgba": (1.0, 0.0, 0.0, 0.3)},
    "canny_edges": {"lo": 0.2, "hi": 0.5},
    "rect_mask": {"box": None, "min_frac": 0.2, "max_frac": 0.5, "per_frame": False},
    "border_mask": {"px": 4},
}

KINDS = tuple(_DEFAULTS)


@dataclass(frozen=True)
class DegradeKind:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _DEFAULTS:
            raise ValueError(f"unknown degradation {self.name!r}; choose from {', '.join(KINDS)}")
        unknown = set(self.params) - set(_DEFAULTS[self.name])
        if unknown:
            raise ValueError(f"{self.name}: unknown parameters {sorted(unknown)}")
        merged = {**_DEFAULTS[self.name], **self.params}
        object.__setattr__(self, "params", merged)
        _validate(self.name, merged)

    def __getitem__(self, key):
        return self.params[key]


def _validate(name: str, p: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ValueError(f"{name}: {msg}")

    if name == "gaussian_blur":
        need(p["sigma"] > 0, "sigma must be > 0")
    elif name in ("saturation", "contrast"):
        need(p["factor"] >= 0, "factor must be >= 0")
    elif name == "brightness":
        need(-1 <= p["delta"] <= 1, "delta must lie in [-1, 1]")
    elif name == "pixelate":
        need(int(p["block"]) == p["block"] and p["block"] >= 1, "block must be an integer >= 1")
    elif name == "wave_warp":
        need(p["amp"] >= 0 and p["period"] > 0, "amp must be >= 0 and period > 0")
    elif name == "posterize":
        need(int(p["levels"]) == p["levels"] and 2 <= p["levels"] <= 255, "levels must be an integer in [2, 255]")
    elif name == "gaussian_noise":
        need(p["sigma"] >= 0, "sigma must be >= 0")
    elif name == "color_overlay":
        need(len(p["rgba"]) == 4 and all(0 <= v <= 1 for v in p["rgba"]), "rgba needs four values in [0, 1]")
    elif name == "canny_edges":
        need(0 <= p["lo"] <= p["hi"], "need 0 <= lo <= hi")
    elif name == "rect_mask":
        need(0 < p["min_frac"] <= p["max_frac"] <= 1, "need 0 < min_frac <= max_frac <= 1")
    elif name == "border_mask":
        need(int(p["px"]) == p["px"] and p["px"] >= 0, "px must be an integer >= 0")


def luma(frames: np.ndarray) -> np.ndarray:
    """(N, 3, H, W) -> (N, H, W).

    Accumulates in float64 so that an already-gray frame maps back onto itself
    exactly after rounding to float32.
    """
    return np.tensordot(LUMA, frames.astype(np.float64), axes=([0], [1])).astype(np.float32)


def _grayscale(x):
    return np.repeat(luma(x)[:, None], 3, axis=1)


def _pixelate(x, block):
    n, c, h, w = x.shape
    out = np.empty_like(x)
    for y0 in range(0, h, block):
        for x0 in range(0, w, block):
            tile = x[:, :, y0 : y0 + block, x0 : x0 + block]
            out[:, :, y0 : y0 + block, x0 : x0 + block] = tile.mean(axis=(2, 3), keepdims=True)
    return out


def _posterize(x, levels):
    q = np.minimum(np.floor(x * levels), levels - 1)
    return (q / (levels - 1)).astype(np.float32)


def _posterize_u8(k: np.ndarray, levels: int) -> np.ndarray:
    """Integer-domain posterize whose output levels sit inside their own bin (so it is idempotent)."""
    q = np.minimum(np.floor(k.astype(np.float64) / 255.0 * levels), levels - 1).astype(np.int64)
    idx = np.arange(levels)
    lo = np.ceil(255.0 * idx / levels).astype(np.int64)
    hi = np.concatenate([lo[1:] - 1, [255]])
    level = np.clip(np.round(255.0 * idx / (levels - 1)).astype(np.int64), lo, hi)
    return level[q].astype(np.uint8)


def _wave_warp(x, amp, period):
    n, c, h, w = x.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = xx + amp * np.sin(2 * np.pi * yy / period)
    sy = yy + amp * np.sin(2 * np.pi * xx / period)
    return bilinear(x.astype(np.float64), sx, sy).astype(np.float32)


def canny(gray: np.ndarray, lo: float, hi: float, sigma: float = 1.0) -> np.ndarray:
    """Binary edge map of one (H, W) frame: Gaussian smoothing, Sobel, non-max suppression, hysteresis."""
    smoothed = ndimage.gaussian_filter(gray.astype(np.float64), sigma, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = (np.round(angle / 45.0).astype(int)) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dy, dx) in offsets.items():
        sel = sector == s
        ahead = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        behind = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        keep |= sel & (mag >= ahead) & (mag >= behind)
    thin = np.where(keep, mag, 0.0)
    strong = thin >= hi
    weak = (thin >= lo) & (thin > 0)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros_like(gray, dtype=np.float32)
    hit = np.zeros(count + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    return hit[labels].astype(np.float32)


def _random_box(gen: np.random.Generator, width: int, height: int, min_frac: float, max_frac: float):
    bw = max(1, int(round(gen.uniform(min_frac, max_frac) * width)))
    bh = max(1, int(round(gen.uniform(min_frac, max_frac) * height)))
    x = int(gen.integers(0, width - bw + 1))
    y = int(gen.integers(0, height - bh + 1))
    return (x, y, bw, bh)


def apply_degradation(clip: VideoClip, kind: DegradeKind, seed: int = 0, return_mask: bool = False):
    """Transform an RGB clip, keeping its shape and sample encoding.

    ``u8`` clips are processed on the unit scale and rounded back to integers,
    which makes negation an exact involution on them.

    With ``return_mask`` the result is ``(clip, mask)``; ``mask`` is ``None``
    except for the rectangle and border kinds.
    """
    if clip.channels != 3:
        raise ValueError(f"degradations expect RGB clips, got {clip.channels} channels")
    x = clip.unit()
    n, _, h, w = x.shape
    p = kind.params
    mask = None
    name = kind.name
    if name == "grayscale":
        out = _grayscale(x)
    elif name == "gaussian_blur":
        out = ndimage.gaussian_filter(x, sigma=(0, 0, p["sigma"], p["sigma"]), mode="nearest")
    elif name == "negate":
        out = 1.0 - x
    elif name == "saturation":
        g = _grayscale(x)
        out = g + np.float32(p["factor"]) * (x - g)
    elif name == "contrast":
        m = luma(x).mean(axis=(1, 2))[:, None, None, None]
        out = m + np.float32(p["factor"]) * (x - m)
    elif name == "brightness":
        out = x + np.float32(p["delta"])
    elif name == "pixelate":
        out = _pixelate(x, int(p["block"]))
    elif name == "wave_warp":
        out = _wave_warp(x, p["amp"], p["period"])
    elif name == "posterize":
        if clip.encoding == "u8":
            return _finish(VideoClip(_posterize_u8(clip.data, int(p["levels"])), "u8"), mask, return_mask)
        out = _posterize(x, int(p["levels"]))
    elif name == "gaussian_noise":
        if p["sigma"] == 0:
            out = x
        else:
            noise = np.stack([rng_mod.stream(seed, "noise", k).standard_normal(x.shape[1:]) for k in range(n)])
            out = x + np.float32(p["sigma"]) * noise.astype(np.float32)
    elif name == "color_overlay":
        r, g, b, a = (np.float32(v) for v in p["rgba"])
        color = np.array([r, g, b], dtype=np.float32)[None, :, None, None]
        out = (1 - a) * x + a * color
    elif name == "canny_edges":
        gray = luma(x)
        edges = np.stack([canny(gray[k], p["lo"], p["hi"]) for k in range(n)])
        out = np.repeat(edges[:, None], 3, axis=1)
    elif name == "rect_mask":
        if p["box"] is not None:
            region = RegionSpec.box(*p["box"])
        elif p["per_frame"]:
            region = RegionSpec.per_frame(
                [_random_box(rng_mod.stream(seed, "rect", k), w, h, p["min_frac"], p["max_frac"]) for k in range(n)]
            )
        else:
            region = RegionSpec.box(*_random_box(rng_mod.stream(seed, "rect", 0), w, h, p["min_frac"], p["max_frac"]))
        mask = make_spatial_mask(n, (w, h), region)
        out = np.where(mask.data.astype(bool), 0.0, x)
    elif name == "border_mask":
        mask = make_border_mask(n, (w, h), int(p["px"]))
        out = np.where(mask.data.astype(bool), 0.0, x)
    else:  # pragma: no cover - guarded by DegradeKind
        raise ValueError(name)
    out = np.clip(out, 0.0, 1.0)
    if clip.encoding == "u8":
        result = VideoClip(np.round(out * 255.0).astype(np.uint8), "u8")
    else:
        result = VideoClip(out.astype(np.float32), "f32")
    return _finish(result, mask, return_mask)


def _finish(result, mask, return_mask):
    return (result, mask) if return_mask else result


def parse_kind(name: str, **params) -> DegradeKind:
    return DegradeKind(name, {k: v for k, v in params.items() if v is not None})


__all__ = ["DegradeKind", "KINDS", "MaskVideo", "apply_degradation", "canny", "parse_kind"]
