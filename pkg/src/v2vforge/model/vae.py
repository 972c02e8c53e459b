"""Frozen pooling stand-in for a video autoencoder.

Frame 0 forms its own temporal group; the remaining frames are grouped ``ft``
at a time. Each latent cell is the mean of its space-time block.
"""

from __future__ import annotations

import numpy as np

from ..media import VideoClip


def latent_shape(frames: int, height: int, width: int, factors) -> tuple[int, int, int]:
    ft, fh, fw = factors
    if (frames - 1) % ft or height % fh or width % fw:
        raise ValueError(
            f"clip {frames}x{height}x{width} incompatible with factors {tuple(factors)}: "
            "need (N-1) % ft == 0, H % fh == 0, W % fw == 0"
        )
    return 1 + (frames - 1) // ft, height // fh, width // fw


def encode_array(x: np.ndarray, factors) -> np.ndarray:
    """(N, C, H, W) -> (n, C, h, w)."""
    ft, fh, fw = factors
    n_frames, c, height, width = x.shape
    n, h, w = latent_shape(n_frames, height, width, factors)
    x = np.asarray(x, dtype=np.float64)
    spatial = x.reshape(n_frames, c, h, fh, w, fw).mean(axis=(3, 5))
    first = spatial[:1]
    rest = spatial[1:].reshape(n - 1, ft, c, h, w).mean(axis=1)
    return np.concatenate([first, rest], axis=0).astype(np.float32)


def surrogate_encode(clip, factors) -> np.ndarray:
    data = clip.unit() if isinstance(clip, VideoClip) else np.asarray(clip, dtype=np.float32)
    return encode_array(data, factors)


def decode_array(lat: np.ndarray, factors) -> np.ndarray:
    ft, fh, fw = factors
    lat = np.asarray(lat)
    up = lat.repeat(fh, axis=2).repeat(fw, axis=3)
    return np.concatenate([up[:1], up[1:].repeat(ft, axis=0)], axis=0)


def surrogate_decode(lat: np.ndarray, factors) -> VideoClip:
    """Nearest-neighbour upsampling back to pixels, clamped to [0, 1]."""
    out = np.clip(decode_array(lat, factors), 0.0, 1.0).astype(np.float32)
    return VideoClip(out, "f32")


def pool_to_latent(x: np.ndarray, shape) -> np.ndarray:
    """Direct adaptive average pool of (N, C, H, W) to (n, C, h, w) with uniform temporal bins.

    Unlike the encoder this does not give frame 0 its own group.
    """
    n, h, w = shape
    x = np.asarray(x, dtype=np.float64)
    n_frames, c, height, width = x.shape
    if height % h or width % w:
        raise ValueError(f"cannot pool {height}x{width} to {h}x{w}")
    spatial = x.reshape(n_frames, c, h, height // h, w, width // w).mean(axis=(3, 5))
    edges = np.floor(np.arange(n + 1) * n_frames / n + 1e-9).astype(int)
    out = np.stack([spatial[edges[i] : max(edges[i + 1], edges[i] + 1)].mean(axis=0) for i in range(n)])
    return out.astype(np.float32)
