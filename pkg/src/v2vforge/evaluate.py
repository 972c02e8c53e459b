"""Pixel-exact proxies for edit quality against programmatic ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .media import VideoClip

PSNR_INF = math.inf
DEFAULT_TAU = 0.1


def _unit(x) -> np.ndarray:
    if isinstance(x, VideoClip):
        return x.unit().astype(np.float64)
    x = np.asarray(x)
    if x.dtype == np.uint8:
        return x.astype(np.float64) / 255.0
    return x.astype(np.float64)


def psnr(a, b, where=None) -> float | None:
    """10 log10(1 / MSE) on the unit scale; +inf for identical regions, None for an empty region."""
    a, b = _unit(a), _unit(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if where is not None:
        sel = np.broadcast_to(where, diff.shape)
        if not sel.any():
            return None
        mse = float(diff[sel].mean())
    else:
        mse = float(diff.mean())
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def edit_accuracy(output, truth, region, tau: float = DEFAULT_TAU) -> float | None:
    """Fraction of region pixels whose every channel is within ``tau`` of ground truth."""
    out, gt = _unit(output), _unit(truth)
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {gt.shape}")
    region = np.asarray(region, dtype=bool)
    if not region.any():
        return None
    ok = (np.abs(out - gt) <= tau + 1e-12).all(axis=1)
    return float(ok[region].mean())


@dataclass
class MetricRow:
    accuracy: float | None
    psnr_exterior: float | None
    psnr_full: float

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "psnr_exterior": self.psnr_exterior, "psnr_full": self.psnr_full}


def region_metrics(output, truth, mask, source, tau: float = DEFAULT_TAU) -> MetricRow:
    """Edited-region accuracy vs ground truth, exterior PSNR vs source, full-frame PSNR vs ground truth."""
    out, gt, src = _unit(output), _unit(truth), _unit(source)
    if not (out.shape == gt.shape == src.shape):
        raise ValueError(f"shape mismatch: {out.shape}, {gt.shape}, {src.shape}")
    m = mask.unit() if isinstance(mask, VideoClip) else (np.asarray(mask) > 0).astype(np.float64)
    if m.ndim == 3:
        m = m[:, None]
    if m.shape != (out.shape[0], 1) + out.shape[2:]:
        raise ValueError(f"mask shape {m.shape} does not match clip {out.shape}")
    interior = m[:, 0] > 0.5
    exterior = ~interior[:, None]
    return MetricRow(
        edit_accuracy(out, gt, interior, tau),
        psnr(out, src, exterior),
        psnr(out, gt),
    )


def finite_or_sentinel(value):
    """JSON-safe form of a metric: +inf becomes the string "inf"."""
    if value is None:
        return None
    if math.isinf(value):
        return "inf"
    return value


def median(values) -> float | None:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return None
    return float(np.median(np.array(vals, dtype=np.float64)))
