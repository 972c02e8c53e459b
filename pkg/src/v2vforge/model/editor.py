"""Toy diffusion-transformer editor over surrogate latents.

Parameters live in a flat ``{name: array}`` dict. Backbone weights cover the
target patch embedding, the conditioning-vector MLP, the instruction word
table, the transformer blocks and the output head. Conditioning weights (the
src / mask / ref patch embeddings and the stream tags) start at exactly zero,
so a fresh editor ignores every visual condition.

Attention projections are stored ``(d_out, d_in)`` and applied as ``x @ W.T``;
every other dense layer is stored ``(d_in, d_out)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rng_mod
from ..autodiff import tensor as tz
from ..autodiff.tensor import Tensor, concat, gelu, layer_norm, sinusoidal_table, softmax
from .config import ModelConfig
from .vae import encode_array, pool_to_latent

COND_PREFIXES = ("src_embed.", "msk_embed.", "ref_embed.", "tag.")
ATTN_PROJ = ("q", "k", "v", "o")
TIME_SCALE = 1000.0
POS_PERIOD = 10.0


# ---------------------------------------------------------------------------
# parameters


def patch_dim(cfg: ModelConfig, channels: int | None = None) -> int:
    pt, ph, pw = cfg.patch
    return (cfg.channels if channels is None else channels) * pt * ph * pw


def _xavier(gen, fan_in, fan_out, shape=None):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(np.float32)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Backbone gets standard random init with zeroed modulation and output head; conditioning is all zeros."""
    d = cfg.width
    p = patch_dim(cfg)
    pm = patch_dim(cfg, 1)
    hidden = d * cfg.mlp_ratio
    z = lambda *s: np.zeros(s, dtype=np.float32)  # noqa: E731
    g = lambda name: rng_mod.stream(seed, "init", name)  # noqa: E731
    params = {
        "tgt_embed.w": _xavier(g("tgt_embed.w"), p, d),
        "tgt_embed.b": z(d),
        "time.w1": _xavier(g("time.w1"), d, d),
        "time.b1": z(d),
        "time.w2": _xavier(g("time.w2"), d, d),
        "time.b2": z(d),
        "text.table": g("text.table").standard_normal((len(cfg.vocab), d)).astype(np.float32),
        "text.proj": _xavier(g("text.proj"), d, d),
    }
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        for name in ATTN_PROJ:
            params[pre + f"attn.{name}"] = _xavier(g(pre + name), d, d, (d, d))
        params[pre + "mod.w"] = z(d, 6 * d)
        params[pre + "mod.b"] = z(6 * d)
        params[pre + "mlp.w1"] = _xavier(g(pre + "mlp.w1"), d, hidden)
        params[pre + "mlp.b1"] = z(hidden)
        params[pre + "mlp.w2"] = _xavier(g(pre + "mlp.w2"), hidden, d)
        params[pre + "mlp.b2"] = z(d)
    params["final.mod.w"] = z(d, 2 * d)
    params["final.mod.b"] = z(2 * d)
    params["final.w"] = z(d, p)
    params["final.b"] = z(p)
    params.update(
        {
            "src_embed.w": z(p, d),
            "src_embed.b": z(d),
            "msk_embed.w": z(pm, d),
            "msk_embed.b": z(d),
            "ref_embed.w": z(p, d),
            "ref_embed.b": z(d),
            "tag.src": z(d),
            "tag.msk": z(d),
            "tag.ref": z(d),
        }
    )
    return params


def is_conditioning(name: str) -> bool:
    return name.startswith(COND_PREFIXES)


def is_lora(name: str) -> bool:
    return ".lora_" in name


def has_lora(params) -> bool:
    return any(is_lora(k) for k in params)


def backbone_names(params) -> list[str]:
    return sorted(k for k in params if not is_conditioning(k) and not is_lora(k))


def trainable_names(params, cfg: ModelConfig) -> list[str]:
    """LoRA: adapters + conditioning routes. Full: everything."""
    if cfg.tuning == "LoRA":
        return sorted(k for k in params if is_lora(k) or is_conditioning(k))
    return sorted(params)


def count(params, names=None) -> int:
    names = params if names is None else names
    return int(sum(params[k].size for k in names))


def lora_param_count(cfg: ModelConfig) -> int:
    return cfg.depth * len(ATTN_PROJ) * 2 * cfg.lora_rank * cfg.width


def conditioning_param_count(cfg: ModelConfig) -> int:
    d = cfg.width
    p, pm = patch_dim(cfg), patch_dim(cfg, 1)
    return 2 * (p * d + d) + (pm * d + d) + 3 * d


def checksum(params, names=None) -> str:
    h = hashlib.sha256()
    for k in sorted(params if names is None else names):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


def lora_attach(params, rank: int, alpha: float, seed: int = 0, std: float | None = None) -> dict[str, np.ndarray]:
    """Add A and B (zeros) to every attention projection.

    A is uniform in +-1/sqrt(d_in) (the usual Kaiming-style LoRA init) unless a
    normal ``std`` is given.
    """
    if has_lora(params):
        raise ValueError("LoRA adapters already attached")
    if rank < 1:
        raise ValueError("LoRA rank must be >= 1")
    out = dict(params)
    names = sorted(k for k in params if k.split(".")[-1] in ATTN_PROJ and ".attn." in k)
    for name in names:
        d_out, d_in = params[name].shape
        gen = rng_mod.stream(seed, "lora", name)
        if std is None:
            a = gen.uniform(-1.0, 1.0, (rank, d_in)) / math.sqrt(d_in)
        else:
            a = std * gen.standard_normal((rank, d_in))
        out[name + ".lora_A"] = a.astype(params[name].dtype)
        out[name + ".lora_B"] = np.zeros((d_out, rank), dtype=params[name].dtype)
    return out


def lora_merge(params, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Fold (alpha / r) B A into each projection and drop the adapters."""
    if not has_lora(params):
        raise ValueError("no LoRA adapters to merge")
    out = {k: v for k, v in params.items() if not is_lora(k)}
    scale = cfg.lora_scale
    for key in params:
        if key.endswith(".lora_A"):
            base = key[: -len(".lora_A")]
            a, b = params[key], params[base + ".lora_B"]
            out[base] = (params[base] + scale * (b @ a)).astype(params[base].dtype)
    return out


def cast(params, dtype) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.items()}


# ---------------------------------------------------------------------------
# patchify and positions

_PATCH_PERM = (0, 1, 4, 6, 3, 2, 5, 7)
_UNPATCH_PERM = tuple(int(i) for i in np.argsort(_PATCH_PERM))


def token_grid(shape, patch) -> tuple[int, int, int]:
    n, h, w = shape
    pt, ph, pw = patch
    if n % pt or h % ph or w % pw:
        raise ValueError(f"latent {n}x{h}x{w} not divisible by patch {tuple(patch)}")
    return n // pt, h // ph, w // pw


def patchify(z: np.ndarray, patch) -> np.ndarray:
    """(B, n, c, h, w) -> (B, T, c*pt*ph*pw), tokens ordered t, then h, then w."""
    b, n, c, h, w = z.shape
    pt, ph, pw = patch
    gt, gh, gw = token_grid((n, h, w), patch)
    x = z.reshape(b, gt, pt, c, gh, ph, gw, pw).transpose(_PATCH_PERM)
    return np.ascontiguousarray(x.reshape(b, gt * gh * gw, c * pt * ph * pw))


def unpatchify(x, shape, patch, channels):
    """Inverse of :func:`patchify`; works on arrays and tape tensors."""
    n, h, w = shape
    pt, ph, pw = patch
    gt, gh, gw = token_grid(shape, patch)
    x = tz.as_tensor(x)
    b = x.shape[0]
    x = x.reshape(b, gt, gh, gw, channels, pt, ph, pw).transpose(_UNPATCH_PERM)
    return x.reshape(b, n, channels, h, w)


def position_codes(grid, width: int, t_offset: int = 0, dtype=np.float32) -> np.ndarray:
    """Factorized sinusoidal (t, h, w) codes, shape (T, width)."""
    k = 2 * (width // 6)
    dt = width - 2 * k
    gt, gh, gw = grid
    tt, hh, ww = np.meshgrid(np.arange(gt) + t_offset, np.arange(gh), np.arange(gw), indexing="ij")
    parts = [
        sinusoidal_table(tt.ravel(), dt, POS_PERIOD, np.float64),
        sinusoidal_table(hh.ravel(), k, POS_PERIOD, np.float64),
        sinusoidal_table(ww.ravel(), k, POS_PERIOD, np.float64),
    ]
    return np.concatenate(parts, axis=1).astype(dtype)


def grid_positions(grid, t_offset: int = 0) -> np.ndarray:
    gt, gh, gw = grid
    tt, hh, ww = np.meshgrid(np.arange(gt) + t_offset, np.arange(gh), np.arange(gw), indexing="ij")
    return np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1)


# ---------------------------------------------------------------------------
# token assembly


@dataclass
class TokenSequence:
    tokens: Tensor
    tags: list
    positions: np.ndarray
    counts: dict = field(default_factory=dict)
    tgt_span: tuple = (0, 0)
    latent_shape: tuple = ()

    def __len__(self) -> int:
        return self.tokens.shape[1]


def _embed(params, prefix, patches):
    return tz.as_tensor(patches) @ tz.as_tensor(params[prefix + ".w"]) + params[prefix + ".b"]


def mask_latent(mask_video, cfg: ModelConfig, shape) -> np.ndarray:
    """Mask video (B, N, 1, H, W) -> latent mask (B, n, 1, h, w) as the variant prescribes."""
    mask_video = np.asarray(mask_video, dtype=np.float32)
    if cfg.mask_injection == "DownsampleAddToSrc":
        return np.stack([pool_to_latent(m, shape) for m in mask_video])
    return np.stack([encode_array(m, cfg.vae_factors) for m in mask_video])


def assemble_tokens(z_tgt, z_src, z_msk, z_ref, params, cfg: ModelConfig) -> TokenSequence:
    """Build the attention sequence.

    SeqCat order is ``[src, tgt, (mask), (ref)]``; EmbedAdd folds src into tgt and
    emits ``[tgt, (ref)]``. A missing mask becomes an all-zero latent.
    ``z_src=None`` gives the bare target stream used by the text-to-video prior.
    """
    z_tgt = np.asarray(z_tgt)
    if z_src is None:
        return _target_only(z_tgt, params, cfg)
    z_src = np.asarray(z_src)
    if z_src.shape != z_tgt.shape:
        raise ValueError(f"source latent {z_src.shape} vs target latent {z_tgt.shape}")
    if cfg.conditioning == "EmbedAdd" and cfg.mask_injection == "SeqCatMask":
        raise ValueError("SeqCatMask cannot be combined with EmbedAdd")
    b, n, c, h, w = z_tgt.shape
    if c != cfg.channels:
        raise ValueError(f"latent has {c} channels, config expects {cfg.channels}")
    if z_msk is None:
        z_msk = np.zeros((b, n, 1, h, w), dtype=z_tgt.dtype)
    z_msk = np.asarray(z_msk, dtype=z_tgt.dtype)
    if z_msk.shape != (b, n, 1, h, w):
        raise ValueError(f"mask latent {z_msk.shape} does not match {(b, n, 1, h, w)}")
    grid = token_grid((n, h, w), cfg.patch)
    pos = position_codes(grid, cfg.width, dtype=z_tgt.dtype)
    positions = grid_positions(grid)
    n_tok = pos.shape[0]

    tgt = _embed(params, "tgt_embed", patchify(z_tgt, cfg.patch))
    src = _embed(params, "src_embed", patchify(z_src, cfg.patch))
    msk = _embed(params, "msk_embed", patchify(z_msk, cfg.patch))
    if cfg.mask_injection in ("AddToSrc", "DownsampleAddToSrc"):
        src = src + msk
    elif cfg.mask_injection == "AddToTgt":
        tgt = tgt + msk

    parts, tags, where = [], [], []
    counts = {"src": 0, "tgt": n_tok, "msk": 0, "ref": 0}
    if cfg.conditioning == "SeqCat":
        parts.append(src + pos + tz.as_tensor(params["tag.src"]))
        tags += ["src"] * n_tok
        where.append(positions)
        counts["src"] = n_tok
        start = n_tok
        parts.append(tgt + pos)
    else:
        start = 0
        parts.append(tgt + src + pos)
    tags += ["tgt"] * n_tok
    where.append(positions)
    if cfg.mask_injection == "SeqCatMask":
        parts.append(msk + pos + tz.as_tensor(params["tag.msk"]))
        tags += ["msk"] * n_tok
        where.append(positions)
        counts["msk"] = n_tok
    if z_ref is not None:
        z_ref = np.asarray(z_ref, dtype=z_tgt.dtype)
        if z_ref.shape[0] != b or z_ref.shape[2:] != (c, h, w) or z_ref.shape[1] != 1:
            raise ValueError(f"reference latent {z_ref.shape} does not match (B, 1, {c}, {h}, {w})")
        z_ref = np.repeat(z_ref, cfg.patch[0], axis=1)
        ref_grid = token_grid(z_ref.shape[1:2] + (h, w), cfg.patch)
        ref_pos = position_codes(ref_grid, cfg.width, dtype=z_tgt.dtype)
        parts.append(_embed(params, "ref_embed", patchify(z_ref, cfg.patch)) + ref_pos + tz.as_tensor(params["tag.ref"]))
        tags += ["ref"] * ref_pos.shape[0]
        where.append(grid_positions(ref_grid))
        counts["ref"] = ref_pos.shape[0]
    tokens = concat(parts, axis=1)
    return TokenSequence(tokens, tags, np.concatenate(where), counts, (start, start + n_tok), (n, h, w))


def _target_only(z_tgt, params, cfg) -> TokenSequence:
    b, n, c, h, w = z_tgt.shape
    grid = token_grid((n, h, w), cfg.patch)
    pos = position_codes(grid, cfg.width, dtype=z_tgt.dtype)
    tokens = _embed(params, "tgt_embed", patchify(z_tgt, cfg.patch)) + pos
    t = pos.shape[0]
    counts = {"src": 0, "tgt": t, "msk": 0, "ref": 0}
    return TokenSequence(tokens, ["tgt"] * t, grid_positions(grid), counts, (0, t), (n, h, w))


# ---------------------------------------------------------------------------
# forward


def bag_of_words(ids_batch, vocab_size: int, dtype=np.float32) -> np.ndarray:
    """(B, V) averaging matrix over each item's instruction ids."""
    bag = np.zeros((len(ids_batch), vocab_size), dtype=dtype)
    for i, ids in enumerate(ids_batch):
        ids = list(ids) or [0]
        if min(ids) < 0 or max(ids) >= vocab_size:
            raise ValueError(f"instruction id outside vocabulary of {vocab_size}")
        np.add.at(bag[i], ids, 1.0 / len(ids))
    return bag


def conditioning_vector(params, t, ids_batch, cfg: ModelConfig, dtype=np.float32):
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("timestep must lie in [0, 1]")
    freq = tz.as_tensor(sinusoidal_table(t * TIME_SCALE, cfg.width, dtype=dtype))
    hidden = gelu(freq @ tz.as_tensor(params["time.w1"]) + params["time.b1"])
    temb = hidden @ tz.as_tensor(params["time.w2"]) + params["time.b2"]
    bag = tz.as_tensor(bag_of_words(ids_batch, len(cfg.vocab), dtype))
    text = (bag @ tz.as_tensor(params["text.table"])) @ tz.as_tensor(params["text.proj"])
    return temb + text


def _proj(x, params, name, scale):
    w = tz.as_tensor(params[name])
    y = x @ w.transpose(1, 0)
    a = params.get(name + ".lora_A")
    if a is not None:
        low = x @ tz.as_tensor(a).transpose(1, 0)
        y = y + (low @ tz.as_tensor(params[name + ".lora_B"]).transpose(1, 0)) * scale
    return y


def _modulate(x, shift, scale):
    return layer_norm(x) * (scale + 1.0) + shift


def _attention(x, params, pre, cfg):
    b, t, d = x.shape
    heads = cfg.heads
    dh = d // heads
    s = cfg.lora_scale

    def split(y):
        return y.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)

    q = split(_proj(x, params, pre + "attn.q", s))
    k = split(_proj(x, params, pre + "attn.k", s))
    v = split(_proj(x, params, pre + "attn.v", s))
    att = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)))
    y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return _proj(y, params, pre + "attn.o", s)


def _chunks(mod, count, d):
    b = mod.shape[0]
    mod = mod.reshape(b, 1, count * d)
    return [mod[:, :, i * d : (i + 1) * d] for i in range(count)]


def model_forward(seq: TokenSequence, t, ids_batch, params, cfg: ModelConfig):
    """Velocity prediction for the target stream, shaped like the target latent."""
    x = seq.tokens
    d = cfg.width
    dtype = x.dtype
    c = conditioning_vector(params, t, ids_batch, cfg, dtype)
    gc = gelu(c)
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        mod = gc @ tz.as_tensor(params[pre + "mod.w"]) + params[pre + "mod.b"]
        sh1, sc1, g1, sh2, sc2, g2 = _chunks(mod, 6, d)
        x = x + g1 * _attention(_modulate(x, sh1, sc1), params, pre, cfg)
        h = gelu(_modulate(x, sh2, sc2) @ tz.as_tensor(params[pre + "mlp.w1"]) + params[pre + "mlp.b1"])
        x = x + g2 * (h @ tz.as_tensor(params[pre + "mlp.w2"]) + params[pre + "mlp.b2"])
    a, b = seq.tgt_span
    x = x[:, a:b]
    fmod = gc @ tz.as_tensor(params["final.mod.w"]) + params["final.mod.b"]
    shift, scale = _chunks(fmod, 2, d)
    out = _modulate(x, shift, scale) @ tz.as_tensor(params["final.w"]) + params["final.b"]
    result = unpatchify(out, seq.latent_shape, cfg.patch, cfg.channels)
    if not np.all(np.isfinite(result.data)):
        raise FloatingPointError("non-finite values in model output")
    return result


def predict(params, cfg: ModelConfig, z_noisy, t, ids_batch, z_src, z_msk=None, z_ref=None):
    seq = assemble_tokens(z_noisy, z_src, z_msk, z_ref, params, cfg)
    return model_forward(seq, t, ids_batch, params, cfg)
