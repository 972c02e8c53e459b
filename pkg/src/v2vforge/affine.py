"""Lift an image edit pair into a pseudo video pair with one shared camera path.

The camera is modelled as a sampling window inside the image: centred at
``(W/2 + tx*W, H/2 + ty*H)`` in continuous pixel-edge coordinates, of size
``zW x zH``, rotated by ``theta``. Output pixel ``(u, v)`` takes the source
value at the point its centre maps to inside that window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .media import Image, VideoClip

THETA_MAX = 15.0
ZOOM_RANGE = (0.66, 1.0)
SHIFT_MAX = 0.33
FEASIBILITY_TOL_PX = 1e-6


class InfeasiblePose(ValueError):
    pass


@dataclass(frozen=True)
class AffinePose:
    theta: float = 0.0
    zoom: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def is_neutral(self) -> bool:
        return self.theta == 0.0 and self.zoom == 1.0 and self.tx == 0.0 and self.ty == 0.0


NEUTRAL = AffinePose()


def _zoom_limit(theta_deg, width: int, height: int):
    c = np.abs(np.cos(np.radians(theta_deg)))
    s = np.abs(np.sin(np.radians(theta_deg)))
    return np.minimum(width / (width * c + height * s), height / (width * s + height * c)), c, s


def constrain_arrays(theta, zoom, tx, ty, dims):
    """Vectorised clamp: zoom first, then translation, so every window corner stays inside."""
    width, height = dims
    theta = np.asarray(theta, dtype=np.float64)
    limit, c, s = _zoom_limit(theta, width, height)
    zoom = np.minimum(np.asarray(zoom, dtype=np.float64), limit)
    hx = zoom * (width * c + height * s) / 2.0
    hy = zoom * (width * s + height * c) / 2.0
    max_tx = np.maximum(width / 2.0 - hx, 0.0) / width
    max_ty = np.maximum(height / 2.0 - hy, 0.0) / height
    tx = np.clip(np.asarray(tx, dtype=np.float64), -max_tx, max_tx)
    ty = np.clip(np.asarray(ty, dtype=np.float64), -max_ty, max_ty)
    return theta, zoom, tx, ty


def constrain_pose(pose: AffinePose, image_dims) -> AffinePose:
    """Shrink zoom, then translation, until the rotated window fits the frame.

    ``image_dims`` is ``(width, height)``.
    """
    theta, zoom, tx, ty = constrain_arrays(pose.theta, pose.zoom, pose.tx, pose.ty, image_dims)
    return AffinePose(float(theta), float(zoom), float(tx), float(ty))


def window_corners(pose: AffinePose, image_dims) -> np.ndarray:
    """Four window corners in pixel-edge coordinates, shape (4, 2) as (x, y)."""
    return corners_array(pose.theta, pose.zoom, pose.tx, pose.ty, image_dims)[0]


def corners_array(theta, zoom, tx, ty, image_dims) -> np.ndarray:
    width, height = image_dims
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    zoom = np.atleast_1d(np.asarray(zoom, dtype=np.float64))
    tx = np.atleast_1d(np.asarray(tx, dtype=np.float64))
    ty = np.atleast_1d(np.asarray(ty, dtype=np.float64))
    rad = np.radians(theta)
    c, s = np.cos(rad), np.sin(rad)
    cx = width / 2.0 + tx * width
    cy = height / 2.0 + ty * height
    offsets = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.float64)
    dx = offsets[:, 0][None] * (zoom[:, None] * width / 2.0)
    dy = offsets[:, 1][None] * (zoom[:, None] * height / 2.0)
    x = cx[:, None] + c[:, None] * dx - s[:, None] * dy
    y = cy[:, None] + s[:, None] * dx + c[:, None] * dy
    return np.stack([x, y], axis=-1)


def corner_violation(pose: AffinePose, image_dims) -> float:
    """Largest distance (pixels) by which a window corner leaves the frame; 0 if inside."""
    width, height = image_dims
    pts = window_corners(pose, image_dims)
    over = np.concatenate([-pts[:, 0], pts[:, 0] - width, -pts[:, 1], pts[:, 1] - height])
    return float(max(over.max(), 0.0))


@dataclass(frozen=True)
class AffineTrajectory:
    theta: np.ndarray
    zoom: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    reversed: bool = False
    image_dims: tuple[int, int] = field(default=(0, 0))

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def poses(self) -> list[AffinePose]:
        return [
            AffinePose(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(self.theta, self.zoom, self.tx, self.ty)
        ]

    def records(self) -> list[dict]:
        return [p.__dict__.copy() for p in self.poses]

    @classmethod
    def still(cls, n_frames: int, image_dims) -> "AffineTrajectory":
        z = np.zeros(n_frames)
        return cls(z.copy(), np.ones(n_frames), z.copy(), z.copy(), False, tuple(image_dims))


def draw_target_pose(gen: np.random.Generator) -> AffinePose:
    theta = gen.uniform(-THETA_MAX, THETA_MAX)
    zoom = gen.uniform(*ZOOM_RANGE)
    tx = gen.uniform(-SHIFT_MAX, SHIFT_MAX)
    ty = gen.uniform(-SHIFT_MAX, SHIFT_MAX)
    return AffinePose(theta, zoom, tx, ty)


def sample_trajectory(n_frames: int, image_dims, rng_seed) -> AffineTrajectory:
    """Linearly interpolate from the neutral pose to a random target, clamping every frame.

    ``image_dims`` is ``(width, height)``. With probability 1/2 the frame order
    is reversed so the path ends on the neutral pose.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    gen = rng_seed if isinstance(rng_seed, np.random.Generator) else rng_mod.stream(rng_seed, "affine")
    target = draw_target_pose(gen)
    flip = bool(gen.random() < 0.5)
    frac = np.arange(n_frames, dtype=np.float64) / (n_frames - 1) if n_frames > 1 else np.zeros(1)
    theta = frac * target.theta
    zoom = 1.0 + frac * (target.zoom - 1.0)
    tx = frac * target.tx
    ty = frac * target.ty
    theta, zoom, tx, ty = constrain_arrays(theta, zoom, tx, ty, image_dims)
    if flip:
        theta, zoom, tx, ty = theta[::-1], zoom[::-1], tx[::-1], ty[::-1]
    return AffineTrajectory(
        np.ascontiguousarray(theta),
        np.ascontiguousarray(zoom),
        np.ascontiguousarray(tx),
        np.ascontiguousarray(ty),
        flip,
        (int(image_dims[0]), int(image_dims[1])),
    )


def sample_points(pose: AffinePose, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Source sampling positions (pixel-centre units) for every output pixel."""
    u = np.arange(width, dtype=np.float64) + 0.5 - width / 2.0
    v = np.arange(height, dtype=np.float64) + 0.5 - height / 2.0
    uu, vv = np.meshgrid(u, v)
    if pose.is_neutral:
        return uu + width / 2.0 - 0.5, vv + height / 2.0 - 0.5
    rad = math.radians(pose.theta)
    c, s = math.cos(rad), math.sin(rad)
    cx = width / 2.0 + pose.tx * width
    cy = height / 2.0 + pose.ty * height
    x = cx + pose.zoom * (c * uu - s * vv)
    y = cy + pose.zoom * (s * uu + c * vv)
    return x - 0.5, y - 0.5


def bilinear(frames: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sampling of ``frames`` (..., H, W) at pixel-centre positions, clamped to the edge."""
    height, width = frames.shape[-2:]
    x = np.clip(x, 0.0, width - 1.0)
    y = np.clip(y, 0.0, height - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    a = frames[..., y0, x0]
    b = frames[..., y0, x1]
    c = frames[..., y1, x0]
    d = frames[..., y1, x1]
    top = a * (1.0 - fx) + b * fx
    bottom = c * (1.0 - fx) + d * fx
    return top * (1.0 - fy) + bottom * fy


def warp_image(image: Image, pose: AffinePose) -> Image:
    height, width = image.height, image.width
    violation = corner_violation(pose, (width, height))
    if violation > FEASIBILITY_TOL_PX:
        raise InfeasiblePose(f"window corner outside the frame by {violation:.3g} px")
    if pose.is_neutral:
        return Image(image.data, image.encoding)
    x, y = sample_points(pose, height, width)
    src = image.data[0].astype(np.float64)
    out = bilinear(src, x, y)
    if image.encoding == "u8":
        out = np.clip(np.round(out), 0, 255).astype(np.uint8)
    else:
        out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return Image(out[None], image.encoding)


@dataclass(frozen=True)
class LiftedPair:
    source: VideoClip
    target: VideoClip
    source_poses: list
    target_poses: list

    def __iter__(self):
        return iter((self.source, self.target))


def lift_pair(src: Image, tgt: Image, traj: AffineTrajectory) -> LiftedPair:
    """Warp both images with the same per-frame pose; the pose records are returned for each clip."""
    if src.shape != tgt.shape:
        raise ValueError(f"source {src.shape} and target {tgt.shape} dimensions differ")
    if src.encoding != tgt.encoding:
        raise ValueError("source and target encodings differ")
    src_frames, tgt_frames = [], []
    poses = traj.poses
    for pose in poses:
        src_frames.append(warp_image(src, pose).data[0])
        tgt_frames.append(warp_image(tgt, pose).data[0])
    source = VideoClip(np.stack(src_frames), src.encoding)
    target = VideoClip(np.stack(tgt_frames), tgt.encoding)
    return LiftedPair(source, target, [p.__dict__.copy() for p in poses], [p.__dict__.copy() for p in poses])
