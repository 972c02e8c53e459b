"""Pixel-space clips, mask videos, RVID containers and JSON-lines manifests."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

MAGIC = b"RVID"
VERSION = 1
HEADER = struct.Struct("<4s5IB")
ENCODINGS = {"u8": 0, "f32": 1}
_DTYPES = {"u8": np.dtype("u1"), "f32": np.dtype("<f4")}
_MAX_DIM = 2**31 - 1

EDIT_TYPES = frozenset(
    {
        "recolor",
        "remove",
        "shape-swap",
        "grayscale-style",
        "i2i",
        "action",
        "control",
        "transition",
        "other",
    }
)


class ContainerError(ValueError):
    pass


class VideoClip:
    """An immutable ``N x C x H x W`` clip.

    ``encoding`` is ``"u8"`` (integers in [0, 255]) or ``"f32"`` (unit interval).
    """

    __slots__ = ("data", "encoding")

    def __init__(self, data, encoding: str | None = None):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ValueError(f"clip data must be 4-D (N, C, H, W), got shape {arr.shape}")
        if encoding is None:
            encoding = "u8" if arr.dtype == np.uint8 else "f32"
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}")
        n, c, h, w = arr.shape
        if min(n, h, w) < 1 or c < 1:
            raise ValueError(f"clip dimensions must be positive, got {arr.shape}")
        arr = np.array(arr, dtype=_DTYPES[encoding].newbyteorder("="), copy=True)
        if encoding == "f32" and arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1):
            raise ValueError("unit-interval samples must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "encoding", encoding)
        self._check()

    def _check(self) -> None:
        pass

    def __setattr__(self, name, value):
        raise AttributeError("clips are immutable")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def unit(self) -> np.ndarray:
        """Samples as float32 in [0, 1] (a fresh writable array)."""
        if self.encoding == "u8":
            return self.data.astype(np.float32) / np.float32(255.0)
        return self.data.astype(np.float32, copy=True)

    def to_unit(self) -> "VideoClip":
        return type(self)(self.unit(), "f32") if self.encoding == "u8" else self

    def to_u8(self) -> "VideoClip":
        if self.encoding == "u8":
            return self
        return type(self)(np.round(self.data * 255.0).astype(np.uint8), "u8")

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoClip):
            return NotImplemented
        return (
            self.encoding == other.encoding
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __hash__(self):
        return hash((self.encoding, self.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape}, encoding={self.encoding!r})"


class Image(VideoClip):
    __slots__ = ()

    def _check(self) -> None:
        if self.frames != 1:
            raise ValueError(f"an image has exactly one frame, got {self.frames}")

    @classmethod
    def from_clip_frame(cls, clip: VideoClip, index: int) -> "Image":
        return cls(clip.data[index : index + 1], clip.encoding)


class MaskVideo(VideoClip):
    """Single-channel clip whose samples are exactly 0 or 1."""

    __slots__ = ()

    def __init__(self, data, encoding: str | None = None):
        arr = np.asarray(data)
        if arr.ndim == 3:
            arr = arr[:, None]
        if encoding is None:
            encoding = "u8" if arr.dtype == np.uint8 or arr.dtype == np.bool_ else "f32"
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        super().__init__(arr, encoding)

    def _check(self) -> None:
        if self.channels != 1:
            raise ValueError(f"mask videos have one channel, got {self.channels}")
        if not np.all((self.data == 0) | (self.data == 1)):
            raise ValueError("mask video is not binary")

    def unit(self) -> np.ndarray:
        return self.data.astype(np.float32)

    def to_u8(self) -> "MaskVideo":
        return MaskVideo(self.data.astype(np.uint8), "u8")

    @property
    def bool(self) -> np.ndarray:
        return self.data.astype(bool)


def unit_clip(data) -> VideoClip:
    return VideoClip(np.clip(np.asarray(data, dtype=np.float32), 0.0, 1.0), "f32")


# ---------------------------------------------------------------------------
# RVID container


def write_container(clip: VideoClip, path, mask: bool = False) -> None:
    """Write ``clip`` as RVID. With ``mask`` set, non-binary samples are rejected."""
    if mask and not isinstance(clip, MaskVideo):
        arr = clip.data if clip.encoding == "u8" else clip.data
        if clip.channels != 1 or not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask video is not binary")
    dims = clip.shape
    if any(d > _MAX_DIM for d in dims):
        raise ValueError(f"dimensions {dims} exceed 2^31-1")
    header = HEADER.pack(MAGIC, VERSION, *dims, ENCODINGS[clip.encoding])
    payload = np.ascontiguousarray(clip.data, dtype=_DTYPES[clip.encoding]).tobytes()
    Path(path).write_bytes(header + payload)


def read_header(path) -> tuple[int, int, int, int, str]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    return _parse_header(raw, path)


def _parse_header(raw: bytes, path) -> tuple[int, int, int, int, str]:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < HEADER.size:
        raise ContainerError(f"{path}: truncated header")
    _, version, n, c, h, w, enc = HEADER.unpack_from(raw)
    if version != VERSION:
        raise ContainerError(f"{path}: unknown version {version}")
    names = {v: k for k, v in ENCODINGS.items()}
    if enc not in names:
        raise ContainerError(f"{path}: unknown encoding byte {enc}")
    return n, c, h, w, names[enc]


def read_container(path) -> VideoClip:
    buf = Path(path).read_bytes()
    n, c, h, w, enc = _parse_header(buf[: HEADER.size], path)
    count = n * c * h * w
    dtype = _DTYPES[enc]
    have = (len(buf) - HEADER.size) // dtype.itemsize
    if have != count or (len(buf) - HEADER.size) % dtype.itemsize:
        raise ContainerError(f"{path}: truncated payload, header declares {count} samples, found {have}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=HEADER.size).reshape(n, c, h, w)
    return VideoClip(arr, enc)


def read_mask(path) -> MaskVideo:
    clip = read_container(path)
    return MaskVideo(clip.data, clip.encoding)


def read_image(path) -> Image:
    clip = read_container(path)
    return Image(clip.data, clip.encoding)


# ---------------------------------------------------------------------------
# PNG sequences (inspection only)


def export_png_dir(clip: VideoClip, directory) -> list[Path]:
    from PIL import Image as PILImage

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    frames = clip.to_u8().data if not isinstance(clip, MaskVideo) else (clip.data * 255).astype(np.uint8)
    written = []
    for k, frame in enumerate(frames):
        if frame.shape[0] == 1:
            img = PILImage.fromarray(frame[0], mode="L")
        else:
            img = PILImage.fromarray(np.ascontiguousarray(frame[:3].transpose(1, 2, 0)), mode="RGB")
        p = out / f"frame_{k:05d}.png"
        img.save(p)
        written.append(p)
    return written


def import_png_dir(directory) -> VideoClip:
    from PIL import Image as PILImage

    paths = sorted(Path(directory).glob("frame_*.png"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    frames = []
    for p in paths:
        arr = np.asarray(PILImage.open(p))
        frames.append(arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)[:3])
    return VideoClip(np.stack(frames).astype(np.uint8), "u8")


# ---------------------------------------------------------------------------
# triples and manifests


@dataclass(frozen=True)
class EditTriple:
    id: str
    src: str
    tgt: str
    instruction: str
    edit_type: str = "other"
    origin: str = ""
    mask: str | None = None
    ref: str | None = None

    FIELDS = ("id", "src", "tgt", "mask", "ref", "instruction", "edit_type", "origin")

    def to_record(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.FIELDS}

    @classmethod
    def from_record(cls, record: dict) -> "EditTriple":
        unknown = set(record) - set(cls.FIELDS)
        if unknown:
            raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(
            id=str(record["id"]),
            src=record["src"],
            tgt=record["tgt"],
            mask=record.get("mask"),
            ref=record.get("ref"),
            instruction=record.get("instruction", ""),
            edit_type=record.get("edit_type", "other"),
            origin=record.get("origin", ""),
        )


def serialize_manifest(triples) -> str:
    return "".join(json.dumps(t.to_record(), sort_keys=False) + "\n" for t in triples)


def parse_manifest(text: str) -> list[EditTriple]:
    return [EditTriple.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]


def write_manifest(triples, path) -> None:
    Path(path).write_text(serialize_manifest(triples), encoding="utf-8")


def append_manifest(triples, path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(serialize_manifest(triples))


def read_manifest(path) -> list[EditTriple]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def resolve(path: str | None, root) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() or root is None else Path(root) / p


def validate_triple(t: EditTriple, root=None) -> list[str]:
    """Check a triple's invariants; an empty list means the triple is well formed."""
    problems: list[str] = []
    if not t.instruction or not t.instruction.strip():
        problems.append("instruction empty")
    if t.edit_type not in EDIT_TYPES:
        problems.append(f"edit_type unknown: {t.edit_type!r}")

    def header(field: str, path):
        try:
            return read_header(resolve(path, root))
        except (OSError, ContainerError) as exc:
            problems.append(f"{field} unreadable: {exc}")
            return None

    src = header("src", t.src)
    tgt = header("tgt", t.tgt)
    if src and tgt:
        if src[0] != tgt[0]:
            problems.append("target frame count mismatch")
        if src[2:4] != tgt[2:4]:
            problems.append("target size mismatch")
    if t.mask is not None:
        m = header("mask", t.mask)
        if m:
            if src and m[0] != src[0]:
                problems.append("mask frame count mismatch")
            if src and m[2:4] != src[2:4]:
                problems.append("mask size mismatch")
            if m[1] != 1:
                problems.append("mask channel count must be 1")
            else:
                data = read_container(resolve(t.mask, root)).data
                if not np.all((data == 0) | (data == 1)):
                    problems.append("mask not binary")
    if t.ref is not None:
        r = header("ref", t.ref)
        if r:
            if r[0] != 1:
                problems.append("reference must have one frame")
            if src and r[2:4] != src[2:4]:
                problems.append("reference size mismatch")
    return problems


def validate_manifest(triples, root=None) -> list[str]:
    problems = []
    seen = set()
    for t in triples:
        if t.id in seen:
            problems.append(f"{t.id}: duplicate id")
        seen.add(t.id)
        problems.extend(f"{t.id}: {p}" for p in validate_triple(t, root))
    return problems
