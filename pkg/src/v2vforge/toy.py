"""Procedural moving-shape clips with exact programmatic edits.

Shapes are drawn on whole ``cell x cell`` pixel blocks and hold their position
inside each temporal group of the surrogate encoder (frame 0 alone, then runs
of ``group`` frames), so every clip is exactly representable in latent space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .degrade import luma
from .media import EditTriple, VideoClip, write_container, write_manifest

TASKS = ("recolor", "remove", "shape-swap", "grayscale-style")

COLORS = {
    "red": (230, 30, 30),
    "green": (30, 200, 60),
    "blue": (40, 80, 230),
    "yellow": (240, 220, 40),
    "magenta": (220, 50, 220),
    "cyan": (40, 220, 230),
    "orange": (250, 140, 20),
    "purple": (140, 60, 200),
}
BACKGROUNDS = ((25, 25, 25), (70, 70, 70), (20, 40, 70), (60, 30, 30))

# 4x4-cell footprints
SHAPES = {
    "square": np.ones((4, 4), dtype=bool),
    "circle": np.array([[0, 1, 1, 0], [1, 1, 1, 1], [1, 1, 1, 1], [0, 1, 1, 0]], dtype=bool),
    "triangle": np.array([[0, 1, 1, 0], [0, 1, 1, 0], [1, 1, 1, 1], [1, 1, 1, 1]], dtype=bool),
}
DIRECTIONS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "still": (0, 0)}

TEMPLATES = {
    "recolor": ("change the {shape} to {color}", "make the {shape} {color}", "turn the {shape} {color}"),
    "remove": ("remove the {shape}",),
    "shape-swap": ("replace the {shape} with a {new_shape}", "turn the {shape} into a {new_shape}"),
    "grayscale-style": ("turn the video into black and white", "make it grayscale"),
}


@dataclass(frozen=True)
class ToySpec:
    tasks: tuple = ("recolor", "remove")
    count: int = 100
    frames: int = 9
    height: int = 32
    width: int = 32
    cell: int = 4
    group: int = 4

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        bad = set(self.tasks) - set(TASKS)
        if bad or not self.tasks:
            raise ValueError(f"tasks must be a nonempty subset of {TASKS}, got {sorted(bad)}")
        if (self.frames - 1) % self.group or self.height % self.cell or self.width % self.cell:
            raise ValueError("frames, height and width must align with the latent grid")
        if min(self.height, self.width) < 5 * self.cell:
            raise ValueError("frame too small for a moving 4-cell shape")


@dataclass
class ToyItem:
    id: str
    task: str
    src: np.ndarray  # (N, 3, H, W) uint8
    tgt: np.ndarray
    mask: np.ndarray  # (N, 1, H, W) uint8
    instruction: str
    caption: str
    meta: dict = field(default_factory=dict)


def group_of(frame: int, group: int) -> int:
    return 0 if frame == 0 else 1 + (frame - 1) // group


def _path(gen, spec: ToySpec):
    n_groups = 1 + (spec.frames - 1) // spec.group
    cols, rows = spec.width // spec.cell, spec.height // spec.cell
    name = list(DIRECTIONS)[int(gen.integers(len(DIRECTIONS)))]
    dx, dy = DIRECTIONS[name]
    span = n_groups - 1
    xs = [x for x in range(cols - 3) if 0 <= x + dx * span <= cols - 4]
    ys = [y for y in range(rows - 3) if 0 <= y + dy * span <= rows - 4]
    x0, y0 = xs[int(gen.integers(len(xs)))], ys[int(gen.integers(len(ys)))]
    return name, [(x0 + dx * g, y0 + dy * g) for g in range(n_groups)]


def _footprints(shape: str, path, spec: ToySpec) -> np.ndarray:
    """(N, H, W) boolean shape region per frame."""
    out = np.zeros((spec.frames, spec.height, spec.width), dtype=bool)
    cell = np.kron(SHAPES[shape], np.ones((spec.cell, spec.cell), dtype=bool))
    size = cell.shape[0]
    for k in range(spec.frames):
        cx, cy = path[group_of(k, spec.group)]
        y, x = cy * spec.cell, cx * spec.cell
        out[k, y : y + size, x : x + size] = cell
    return out


def _paint(region: np.ndarray, color, background) -> np.ndarray:
    n, h, w = region.shape
    clip = np.empty((n, 3, h, w), dtype=np.uint8)
    for c in range(3):
        clip[:, c] = np.where(region, color[c], background[c])
    return clip


def _gray_u8(clip: np.ndarray) -> np.ndarray:
    g = luma(clip.astype(np.float32) / 255.0)
    return np.repeat(np.round(g * 255.0).astype(np.uint8)[:, None], 3, axis=1)


def make_item(spec: ToySpec, seed: int, index: int, task: str | None = None) -> ToyItem:
    gen = rng_mod.stream(seed, "toy", index)
    task = task or spec.tasks[int(gen.integers(len(spec.tasks)))]
    shape = list(SHAPES)[int(gen.integers(len(SHAPES)))]
    color_name = list(COLORS)[int(gen.integers(len(COLORS)))]
    color = COLORS[color_name]
    background = BACKGROUNDS[int(gen.integers(len(BACKGROUNDS)))]
    direction, path = _path(gen, spec)
    region = _footprints(shape, path, spec)
    src = _paint(region, color, background)
    fields = {"shape": shape}
    if task == "recolor":
        others = [c for c in COLORS if c != color_name]
        new = others[int(gen.integers(len(others)))]
        tgt = _paint(region, COLORS[new], background)
        mask = region
        fields["color"] = new
        caption = f"a {new} {shape} moving {direction}"
    elif task == "remove":
        tgt = _paint(np.zeros_like(region), color, background)
        mask = region
        caption = "a plain background"
    elif task == "shape-swap":
        others = [s for s in SHAPES if s != shape]
        new_shape = others[int(gen.integers(len(others)))]
        new_region = _footprints(new_shape, path, spec)
        tgt = _paint(new_region, color, background)
        mask = region | new_region
        fields["new_shape"] = new_shape
        caption = f"a {color_name} {new_shape} moving {direction}"
    else:
        tgt = _gray_u8(src)
        mask = np.ones_like(region)
        caption = f"a grayscale {shape} moving {direction}"
    templates = TEMPLATES[task]
    instruction = templates[int(gen.integers(len(templates)))].format(**fields)
    meta = {"shape": shape, "color": color_name, "background": list(background), "direction": direction, "path": path}
    return ToyItem(
        id=f"toy-{seed}-{index:05d}",
        task=task,
        src=src,
        tgt=tgt,
        mask=mask[:, None].astype(np.uint8),
        instruction=instruction,
        caption=caption,
        meta=meta,
    )


def generate_items(spec: ToySpec, seed: int, start: int = 0) -> list[ToyItem]:
    return [make_item(spec, seed, start + i) for i in range(spec.count)]


def caption_items(spec: ToySpec, seed: int, instructions: bool = True) -> list[tuple[np.ndarray, str]]:
    """(clip, caption) pairs for prior training: the target side of random toy edits.

    With ``instructions`` each target also appears under its edit instruction, so
    the prior's word table covers the editing vocabulary (a frozen text encoder
    has to know those words before any adapter is trained).
    """
    items = generate_items(spec, seed)
    pairs = [(it.tgt, it.caption) for it in items]
    if instructions:
        pairs += [(it.tgt, it.instruction) for it in items]
    return pairs


def synth_toy_dataset(spec: ToySpec, seed: int, out_dir) -> list[EditTriple]:
    """Write clips, masks and ``manifest.jsonl`` under ``out_dir``; same seed, same bytes."""
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    triples = []
    for item in generate_items(spec, seed):
        stem = f"clips/{item.id}"
        write_container(_clip(item.src), out / f"{stem}.src.rvid")
        write_container(_clip(item.tgt), out / f"{stem}.tgt.rvid")
        write_container(_clip(item.mask), out / f"{stem}.mask.rvid", mask=True)
        triples.append(
            EditTriple(
                id=item.id,
                src=f"{stem}.src.rvid",
                tgt=f"{stem}.tgt.rvid",
                mask=f"{stem}.mask.rvid",
                instruction=item.instruction,
                edit_type=item.task,
                origin="toy",
            )
        )
    write_manifest(triples, out / "manifest.jsonl")
    return triples


def _clip(data):
    return VideoClip(data, "u8")


def items_from_manifest(path) -> list[ToyItem]:
    """Load any edit manifest into in-memory items (mask of ones when absent)."""
    from .media import read_container, read_manifest, resolve

    root = Path(path).parent
    items = []
    for t in read_manifest(path):
        src = read_container(resolve(t.src, root))
        tgt = read_container(resolve(t.tgt, root))
        if t.mask:
            mask = read_container(resolve(t.mask, root)).data
            mask = (mask > 0).astype(np.uint8) if mask.dtype == np.uint8 else (mask > 0.5).astype(np.uint8)
        else:
            mask = np.ones((src.frames, 1, src.height, src.width), dtype=np.uint8)
        items.append(ToyItem(t.id, t.edit_type, src.data, tgt.data, mask, t.instruction, t.instruction))
    return items
