"""Rectified-flow training (prior and editor) and the guided Euler sampler."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .affine import bilinear
from .autodiff import GradTape, OptState, adamw_step, mse
from .media import Image, MaskVideo, VideoClip
from .model import editor as ed
from .model.config import ModelConfig, tokenize
from .model.vae import encode_array, surrogate_decode
from .transitions import TransitionSpec, compose_transition

log = logging.getLogger(__name__)

VARIANTS = ("PromptOnly", "PromptPlusRef")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    p_ref_drop: float = 0.5
    p_transition: float = 0.5
    p_prompt_drop: float = 0.1
    ref_crop_min_area: float = 0.8
    ref_rotation_deg: float = 10.0
    transition_window: int = 8
    use_masks: bool = False

    def __post_init__(self):
        for name in ("p_ref_drop", "p_transition", "p_prompt_drop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.ref_crop_min_area <= 1.0:
            raise ValueError("ref_crop_min_area must lie in (0, 1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 3.0
    variant: str = "PromptOnly"
    steps: int = 20

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.steps < 1:
            raise ValueError("sampler needs at least one step")


@dataclass
class Example:
    """One training pair on the unit scale. ``src`` is None for prior (caption-only) data."""

    tgt: np.ndarray
    ids: list
    src: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass
class TrainResult:
    params: dict
    cfg: ModelConfig
    log: list = field(default_factory=list)
    ref_batches: int = 0

    def write_log(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "wall_ms"])
            for row in self.log:
                w.writerow([row[0], f"{row[1]:.6g}", f"{row[2]:.3f}"])


def to_model(lat):
    """Unit-scale latent -> the [-1, 1] range the flow is trained on."""
    return lat * 2.0 - 1.0


def from_model(z):
    return (z + 1.0) * 0.5


def _unit(x) -> np.ndarray:
    if isinstance(x, VideoClip):
        return x.unit()
    x = np.asarray(x)
    return x.astype(np.float32) / 255.0 if x.dtype == np.uint8 else x.astype(np.float32)


def examples_from_items(items, vocab, with_masks: bool = False) -> list[Example]:
    return [
        Example(_unit(it.tgt), tokenize(it.instruction, vocab), _unit(it.src), _unit(it.mask) if with_masks else None)
        for it in items
    ]


def examples_from_captions(pairs, vocab) -> list[Example]:
    return [Example(_unit(clip), tokenize(caption, vocab)) for clip, caption in pairs]


# ---------------------------------------------------------------------------
# reference augmentation


def augment_reference(frame: np.ndarray, gen: np.random.Generator, min_area: float, max_deg: float) -> np.ndarray:
    """Random crop (resized back) and rotation of one (C, H, W) frame; dims never change."""
    c, h, w = frame.shape
    side = math.sqrt(gen.uniform(min_area, 1.0))
    ch, cw = side * h, side * w
    y0 = gen.uniform(0.0, h - ch)
    x0 = gen.uniform(0.0, w - cw)
    theta = math.radians(gen.uniform(-max_deg, max_deg))
    cos, sin = math.cos(theta), math.sin(theta)
    v, u = np.meshgrid(np.arange(h) + 0.5 - h / 2.0, np.arange(w) + 0.5 - w / 2.0, indexing="ij")
    cx, cy = x0 + cw / 2.0, y0 + ch / 2.0
    x = cx + side * (cos * u - sin * v) - 0.5
    y = cy + side * (sin * u + cos * v) - 0.5
    return np.clip(bilinear(frame.astype(np.float64), x, y), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    x_t: np.ndarray
    t: np.ndarray
    v: np.ndarray
    ids: list
    z_src: np.ndarray | None
    z_msk: np.ndarray | None
    z_ref: np.ndarray | None
    has_ref: np.ndarray
    masks: list = field(default_factory=list)


def make_batch(examples, idx, cfg: ModelConfig, tc: TrainConfig, gen: np.random.Generator, editor: bool) -> Batch:
    """Per item: optional transition target, reference pick/augment/drop, prompt drop, flow noising."""
    tgts, srcs, masks, refs, ids = [], [], [], [], []
    for i in idx:
        ex = examples[int(i)]
        tgt, mask = ex.tgt, ex.mask
        if editor:
            if gen.random() < tc.p_transition:
                onset = int(gen.integers(1, tgt.shape[0]))
                spec = TransitionSpec(onset, tc.transition_window)
                composed, tmask = compose_transition(VideoClip(ex.src, "f32"), VideoClip(tgt, "f32"), spec)
                tgt, mask = composed.data, tmask.unit()
            pick = int(gen.integers(tgt.shape[0]))
            ref = augment_reference(tgt[pick], gen, tc.ref_crop_min_area, tc.ref_rotation_deg)
            refs.append(None if gen.random() < tc.p_ref_drop else ref)
            srcs.append(ex.src)
        masks.append(mask)
        tgts.append(tgt)
        ids.append([0] if gen.random() < tc.p_prompt_drop else ex.ids)
    factors = cfg.vae_factors
    z = to_model(np.stack([encode_array(x, factors) for x in tgts]))
    b = z.shape[0]
    t = gen.uniform(0.0, 1.0, size=b).astype(np.float32)
    eps = gen.standard_normal(z.shape).astype(np.float32)
    tb = t[:, None, None, None, None]
    x_t = (1.0 - tb) * z + tb * eps
    v = eps - z
    z_src = z_msk = z_ref = None
    has_ref = np.zeros(b, dtype=bool)
    if editor:
        z_src = to_model(np.stack([encode_array(x, factors) for x in srcs]))
        shape = z.shape[1:2] + z.shape[3:]
        blank = np.zeros((tgts[0].shape[0], 1) + tgts[0].shape[2:], dtype=np.float32)
        z_msk = ed.mask_latent(np.stack([blank if m is None else m for m in masks]), cfg, shape)
        has_ref = np.array([r is not None for r in refs])
        if has_ref.any():
            z_ref = np.zeros((b, 1) + z.shape[2:], dtype=np.float32)
            for j, r in enumerate(refs):
                if r is not None:
                    z_ref[j] = to_model(encode_array(r[None], factors))
    return Batch(x_t, t, v, ids, z_src, z_msk, z_ref, has_ref, masks)


def batch_loss(params, cfg: ModelConfig, batch: Batch):
    """Flow MSE on target tokens; items with and without a reference run as separate groups."""
    b = batch.x_t.shape[0]
    groups = [(np.nonzero(batch.has_ref)[0], True), (np.nonzero(~batch.has_ref)[0], False)]
    total = None
    for idx, with_ref in groups:
        if len(idx) == 0:
            continue
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        pred = ed.predict(
            params,
            cfg,
            batch.x_t[idx],
            batch.t[idx],
            [batch.ids[i] for i in idx],
            pick(batch.z_src),
            pick(batch.z_msk),
            pick(batch.z_ref) if with_ref else None,
        )
        term = mse(pred, batch.v[idx]) * (len(idx) / b)
        total = term if total is None else total + term
    return total


def _train(params, cfg, examples, tc: TrainConfig, trainable, editor: bool, on_step=None) -> TrainResult:
    if not examples:
        raise ValueError("empty training set")
    state = OptState(lr=tc.lr, weight_decay=tc.weight_decay)
    result = TrainResult(params, cfg)
    for step in range(tc.steps):
        t0 = time.perf_counter()
        gen = rng_mod.stream(tc.seed, "train", step)
        idx = gen.integers(0, len(examples), size=tc.batch_size)
        batch = make_batch(examples, idx, cfg, tc, gen, editor)
        if batch.has_ref.any():
            result.ref_batches += 1
        try:
            with GradTape() as tape:
                tracked = dict(params)
                tracked.update({k: tape.watch(k, params[k]) for k in trainable})
                loss = batch_loss(tracked, cfg, batch)
                grads = tape.gradient(loss)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        params, state = adamw_step(params, grads, state)
        wall = (time.perf_counter() - t0) * 1000.0
        result.log.append((step, float(loss.data), wall))
        if on_step is not None:
            on_step(step, float(loss.data))
    result.params = params
    return result


def pretrain_backbone(cfg: ModelConfig, examples, tc: TrainConfig, seed: int | None = None, on_step=None) -> TrainResult:
    """Text-to-video prior on the bare target stream; every backbone weight trains."""
    params = ed.init_params(cfg, tc.seed if seed is None else seed)
    trainable = ed.backbone_names(params)
    return _train(params, cfg, examples, tc, trainable, editor=False, on_step=on_step)


def check_compatible(backbone_cfg: ModelConfig, cfg: ModelConfig, params) -> None:
    if backbone_cfg.backbone_key() != cfg.backbone_key():
        raise ValueError("editor config does not match the backbone checkpoint (width/depth/heads/patch/vae/vocab)")
    expected = set(ed.init_params(cfg, 0))
    missing = expected - set(params)
    if missing:
        raise ValueError(f"backbone checkpoint lacks {sorted(missing)[:3]}")


def finetune_editor(backbone, backbone_cfg: ModelConfig, examples, cfg: ModelConfig, tc: TrainConfig, on_step=None) -> TrainResult:
    """Fine-tune from a prior. LoRA mode trains adapters and conditioning routes only."""
    check_compatible(backbone_cfg, cfg, backbone)
    if any(ex.src is None for ex in examples):
        raise ValueError("editor training needs source clips")
    fresh = ed.init_params(cfg, tc.seed)
    params = {k: np.array(backbone[k] if not ed.is_conditioning(k) else fresh[k], copy=True) for k in fresh}
    if cfg.tuning == "LoRA":
        params = ed.lora_attach(params, cfg.lora_rank, cfg.lora_alpha, seed=tc.seed)
    trainable = ed.trainable_names(params, cfg)
    return _train(params, cfg, examples, tc, trainable, editor=True, on_step=on_step)


def probe_loss(params, cfg: ModelConfig, examples, seed: int = 0, size: int = 16, editor: bool = True) -> float:
    """Loss on a fixed, augmentation-free batch (same noise every call)."""
    tc = TrainConfig(p_ref_drop=1.0, p_transition=0.0, p_prompt_drop=0.0, batch_size=size)
    gen = rng_mod.stream(seed, "probe")
    idx = np.arange(min(size, len(examples)))
    batch = make_batch(examples, idx, cfg, tc, gen, editor)
    return float(batch_loss(params, cfg, batch).data)


# ---------------------------------------------------------------------------
# guidance and sampling


def cfg_combine(uncond, cond, s: float):
    """Guided prediction ``(1 - s) * uncond + s * cond``.

    Algebraically ``uncond + s * (cond - uncond)``; this grouping returns each
    branch bit-exactly at s = 0 and s = 1.
    """
    uncond = np.asarray(uncond)
    cond = np.asarray(cond)
    if uncond.shape != cond.shape:
        raise ValueError(f"branch shapes differ: {uncond.shape} vs {cond.shape}")
    s = uncond.dtype.type(s)
    one = uncond.dtype.type(1.0)
    return (one - s) * uncond + s * cond


def branch_inputs(variant: str, z_src, z_msk, z_ref, ids):
    """(uncond, cond) keyword sets for one guided step."""
    null = [[0] for _ in ids]
    cond = dict(z_src=z_src, z_msk=z_msk, z_ref=z_ref, ids=ids)
    if variant == "PromptOnly":
        uncond = dict(z_src=z_src, z_msk=z_msk, z_ref=z_ref, ids=null)
    else:
        if z_ref is None:
            raise ValueError("PromptPlusRef guidance needs a reference image")
        uncond = dict(z_src=z_src, z_msk=z_msk, z_ref=None, ids=null)
    return uncond, cond


def sample_latents(params, cfg: ModelConfig, z_src, ids, guidance: GuidanceConfig, seed: int = 0, z_msk=None, z_ref=None, branch: str | None = None, noise=None):
    """Euler integration of the guided velocity field from t=1 to t=0.

    ``branch`` ("cond" or "uncond") skips guidance and follows that field alone.
    """
    if branch not in (None, "cond", "uncond"):
        raise ValueError(f"unknown branch {branch!r}")
    z_src = None if z_src is None else np.asarray(z_src, dtype=np.float32)
    shape = noise.shape if noise is not None else z_src.shape
    z = np.array(noise, dtype=np.float32) if noise is not None else rng_mod.stream(seed, "sample").standard_normal(shape).astype(np.float32)
    uncond_kw, cond_kw = branch_inputs(guidance.variant, z_src, z_msk, z_ref, ids)
    dt = np.float32(1.0 / guidance.steps)
    b = shape[0]

    def velocity(kw, t):
        return ed.predict(params, cfg, z, np.full(b, t, dtype=np.float32), kw["ids"], kw["z_src"], kw["z_msk"], kw["z_ref"]).data

    for i in range(guidance.steps):
        t = 1.0 - i / guidance.steps
        if branch == "cond":
            v = velocity(cond_kw, t)
        elif branch == "uncond":
            v = velocity(uncond_kw, t)
        else:
            v = cfg_combine(velocity(uncond_kw, t), velocity(cond_kw, t), guidance.scale)
        z = z - dt * v
    return z


def encode_inputs(cfg: ModelConfig, sources, masks=None, refs=None):
    f = cfg.vae_factors
    z_src = to_model(np.stack([encode_array(_unit(s), f) for s in sources]))
    shape = z_src.shape[1:2] + z_src.shape[3:]
    z_msk = None
    if masks is not None and any(m is not None for m in masks):
        first = _unit(sources[0])
        blank = np.zeros((first.shape[0], 1) + first.shape[2:], dtype=np.float32)
        z_msk = ed.mask_latent(np.stack([blank if m is None else _unit(m) for m in masks]), cfg, shape)
    z_ref = None
    if refs is not None:
        if any(r is None for r in refs):
            raise ValueError("references must be given for every item or none")
        z_ref = to_model(np.stack([encode_array(_unit(r), f) for r in refs]))
    return z_src, z_msk, z_ref


def decode_latents(z, cfg: ModelConfig) -> list[VideoClip]:
    return [surrogate_decode(from_model(x), cfg.vae_factors) for x in z]


def sample_video(params, cfg: ModelConfig, source: VideoClip, instruction: str, mask: MaskVideo | None = None, reference: Image | None = None, guidance: GuidanceConfig = GuidanceConfig(), seed: int = 0) -> VideoClip:
    if guidance.variant == "PromptPlusRef" and reference is None:
        raise ValueError("PromptPlusRef guidance needs a reference image")
    z_src, z_msk, z_ref = encode_inputs(cfg, [source], None if mask is None else [mask], None if reference is None else [reference])
    ids = [tokenize(instruction, cfg.vocab)]
    z = sample_latents(params, cfg, z_src, ids, guidance, seed, z_msk, z_ref)
    return decode_latents(z, cfg)[0]


def sample_prior(params, cfg: ModelConfig, caption: str, shape, guidance: GuidanceConfig = GuidanceConfig(scale=1.0), seed: int = 0) -> VideoClip:
    """Draw from the text-to-video prior; ``shape`` is the latent (n, c, h, w)."""
    noise = rng_mod.stream(seed, "sample").standard_normal((1,) + tuple(shape)).astype(np.float32)
    ids = [tokenize(caption, cfg.vocab)]
    z = sample_latents(params, cfg, None, ids, guidance, seed, noise=noise)
    return decode_latents(z, cfg)[0]
