"""Transition-supervised targets and spatiotemporal mask videos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .media import MaskVideo, VideoClip

DEFAULT_WINDOW = 8


@dataclass(frozen=True)
class TransitionSpec:
    onset: int
    window: int = DEFAULT_WINDOW
    profile: str = "linear"

    def __post_init__(self):
        if self.window < 0 or self.window % 2:
            raise ValueError("blend window must be a nonnegative even frame count")
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.profile != "linear":
            raise ValueError(f"unsupported blend profile {self.profile!r}")


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned boxes ``(x, y, w, h)`` in pixels; one per frame, or one static box for all."""

    boxes: tuple = ()
    static: bool = True

    @classmethod
    def box(cls, x: int, y: int, w: int, h: int) -> "RegionSpec":
        return cls(((x, y, w, h),), static=True)

    @classmethod
    def per_frame(cls, boxes) -> "RegionSpec":
        return cls(tuple(tuple(b) if b is not None else None for b in boxes), static=False)


def blend_weights(n: int, spec: TransitionSpec) -> np.ndarray:
    """Per-frame target weight alpha_k: 0 before the window, 1 after, linear at frame centres inside."""
    k = np.arange(n, dtype=np.float64)
    if spec.window == 0:
        return (k >= spec.onset).astype(np.float64)
    half = spec.window // 2
    alpha = (k - spec.onset + half + 0.5) / spec.window
    alpha[k < spec.onset - half] = 0.0
    alpha[k >= spec.onset + half] = 1.0
    return alpha


def compose_transition(src: VideoClip, tgt: VideoClip, spec: TransitionSpec) -> tuple[VideoClip, MaskVideo]:
    """Source frames before the onset, target frames after, a linear blend around it.

    The mask is frame-wise binary and switches on at the onset frame.
    """
    if src.shape != tgt.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {tgt.shape}")
    n = src.frames
    if spec.onset > n:
        raise ValueError(f"onset {spec.onset} beyond clip of {n} frames")
    a = src.unit()
    b = tgt.unit()
    alpha = blend_weights(n, spec)
    out = a.copy()
    after = alpha == 1.0
    inside = (alpha > 0.0) & ~after
    out[after] = b[after]
    if inside.any():
        w = alpha[inside].astype(np.float32)[:, None, None, None]
        blended = (1.0 - w) * a[inside] + w * b[inside]
        lo = np.minimum(a[inside], b[inside])
        hi = np.maximum(a[inside], b[inside])
        out[inside] = np.clip(blended, lo, hi)
    mask = make_temporal_mask(n, min(spec.onset, n), (src.width, src.height))
    return VideoClip(out, "f32"), mask


def make_temporal_mask(n: int, onset: int, dims) -> MaskVideo:
    """``dims`` is ``(width, height)``; frames at or after ``onset`` are all ones."""
    if not (0 <= onset <= n):
        raise ValueError(f"onset {onset} outside [0, {n}]")
    width, height = dims
    data = np.zeros((n, 1, height, width), dtype=np.uint8)
    data[onset:] = 1
    return MaskVideo(data, "u8")


def _check_box(box, width, height):
    x, y, w, h = box
    if w < 0 or h < 0 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValueError(f"box {box} outside {width}x{height} frame")


def make_spatial_mask(n: int, dims, region: RegionSpec | None) -> MaskVideo:
    width, height = dims
    data = np.zeros((n, 1, height, width), dtype=np.uint8)
    if region is None or not region.boxes:
        return MaskVideo(data, "u8")
    if region.static:
        boxes = [region.boxes[0]] * n
    else:
        if len(region.boxes) != n:
            raise ValueError(f"{len(region.boxes)} per-frame boxes for {n} frames")
        boxes = region.boxes
    for k, box in enumerate(boxes):
        if box is None:
            continue
        _check_box(box, width, height)
        x, y, w, h = box
        data[k, 0, y : y + h, x : x + w] = 1
    return MaskVideo(data, "u8")


def make_border_mask(n: int, dims, border: int) -> MaskVideo:
    """Ones on a ``border``-pixel frame around every frame (outpainting region)."""
    width, height = dims
    if border < 0 or 2 * border > min(width, height):
        raise ValueError(f"border {border} does not fit a {width}x{height} frame")
    data = np.zeros((n, 1, height, width), dtype=np.uint8)
    if border:
        data[:, :, :border] = 1
        data[:, :, -border:] = 1
        data[:, :, :, :border] = 1
        data[:, :, :, -border:] = 1
    return MaskVideo(data, "u8")


def combine_masks(a: MaskVideo, b: MaskVideo, mode: str = "intersect") -> MaskVideo:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    x, y = a.data.astype(bool), b.data.astype(bool)
    if mode == "intersect":
        out = x & y
    elif mode == "union":
        out = x | y
    else:
        raise ValueError(f"unknown combine mode {mode!r}")
    return MaskVideo(out.astype(np.uint8), "u8")
