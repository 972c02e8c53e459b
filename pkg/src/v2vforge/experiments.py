"""Ablation grid runner and the token/time profiler."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .autodiff import GradTape, OptState, adamw_step
from .evaluate import DEFAULT_TAU, finite_or_sentinel, median, region_metrics
from .model import editor as ed
from .model.config import ModelConfig, tokenize
from .model.vae import latent_shape
from .train import (
    GuidanceConfig,
    TrainConfig,
    TrainingDiverged,
    Batch,
    batch_loss,
    decode_latents,
    encode_inputs,
    examples_from_items,
    finetune_editor,
    sample_latents,
)

log = logging.getLogger(__name__)

# Reference-only values from the full-scale study; never asserted.
FULL_SCALE_REFERENCE = {
    "lora_seqcat_vlm_20k": 7.05,
    "lora_seqcat_vlm_40k": 7.47,
    "lora_embedadd_vlm": 6.29,
    "seqcat_s_per_sample": 67.71,
    "embedadd_s_per_sample": 30.41,
}

GRID_FIELDS = ["cell", "seed", "status", "accuracy", "psnr_exterior", "psnr_full", "final_loss", "train_seconds"]


@dataclass
class GridSpec:
    """Cells are named ModelConfig overrides; every cell trains on every seed."""

    cells: dict
    seeds: tuple = (0, 1, 2)
    train: TrainConfig = field(default_factory=TrainConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    tau: float = DEFAULT_TAU
    with_masks: bool = False
    sample_seed: int = 1234

    @classmethod
    def conditioning_tuning(cls, **kw) -> "GridSpec":
        cells = {
            f"{tuning}-{cond}": {"tuning": tuning, "conditioning": cond}
            for tuning in ("Full", "LoRA")
            for cond in ("EmbedAdd", "SeqCat")
        }
        return cls(cells=cells, **kw)

    @classmethod
    def mask_variants(cls, **kw) -> "GridSpec":
        cells = {m: {"tuning": "LoRA", "conditioning": "SeqCat", "mask_injection": m} for m in ("AddToSrc", "AddToTgt", "DownsampleAddToSrc", "SeqCatMask")}
        kw.setdefault("with_masks", True)
        return cls(cells=cells, **kw)


def evaluate_editor(params, cfg: ModelConfig, items, guidance: GuidanceConfig, tau: float, with_masks: bool, seed: int, batch: int = 16):
    """Sample every held-out item and score it; returns per-item metric dicts."""
    rows = []
    for start in range(0, len(items), batch):
        chunk = items[start : start + batch]
        masks = [it.mask for it in chunk] if with_masks else None
        z_src, z_msk, _ = encode_inputs(cfg, [it.src for it in chunk], masks)
        ids = [tokenize(it.instruction, cfg.vocab) for it in chunk]
        z = sample_latents(params, cfg, z_src, ids, guidance, seed=seed + start, z_msk=z_msk)
        for it, out in zip(chunk, decode_latents(z, cfg)):
            m = region_metrics(out, it.tgt, it.mask, it.src, tau)
            rows.append({"id": it.id, "task": it.task, **m.as_dict()})
    return rows


def _summaries(rows) -> dict:
    out = {"all": _summary(rows)}
    for task in sorted({r["task"] for r in rows}):
        out[task] = _summary([r for r in rows if r["task"] == task])
    return out


def _summary(rows) -> dict:
    return {k: median(r[k] for r in rows) for k in ("accuracy", "psnr_exterior", "psnr_full")}


def _jsonable(obj):
    if isinstance(obj, float):
        return finite_or_sentinel(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _unjson(obj):
    if obj == "inf":
        return math.inf
    if isinstance(obj, dict):
        return {k: _unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjson(v) for v in obj]
    return obj


def run_cell(name, overrides, seed, spec: GridSpec, backbone, backbone_cfg: ModelConfig, train_items, heldout) -> dict:
    cfg = backbone_cfg.replace(**overrides)
    tc = TrainConfig(**{**asdict(spec.train), "seed": seed, "use_masks": spec.with_masks})
    examples = examples_from_items(train_items, cfg.vocab, with_masks=spec.with_masks)
    t0 = time.perf_counter()
    record = {"cell": name, "seed": seed, "config": json.loads(cfg.to_json())}
    try:
        result = finetune_editor(backbone, backbone_cfg, examples, cfg, tc)
    except TrainingDiverged as exc:
        record.update(status="diverged", error=str(exc), train_seconds=time.perf_counter() - t0)
        return record
    record["train_seconds"] = time.perf_counter() - t0
    record["final_loss"] = float(np.mean([r[1] for r in result.log[-max(1, len(result.log) // 20) :]]))
    rows = evaluate_editor(result.params, cfg, heldout, spec.guidance, spec.tau, spec.with_masks, spec.sample_seed)
    record.update(status="ok", items=rows, summary=_summaries(rows))
    return record


def _cell_worker(args):
    return run_cell(*args)


def run_grid(spec: GridSpec, backbone, backbone_cfg: ModelConfig, train_items, heldout, out_dir, jobs: int = 1) -> dict:
    """Train/evaluate every (cell, seed); finished cells are read back, so reruns are no-ops."""
    out = Path(out_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    todo = []
    for name, overrides in spec.cells.items():
        for seed in spec.seeds:
            path = cells_dir / f"{name}__seed{seed}.json"
            if not path.exists():
                todo.append((path, (name, overrides, seed, spec, backbone, backbone_cfg, train_items, heldout)))
    if todo:
        log.info("grid: %d of %d runs to do", len(todo), len(spec.cells) * len(spec.seeds))
    if jobs > 1 and len(todo) > 1:
        import multiprocessing as mp

        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        with mp.get_context("spawn").Pool(min(jobs, len(todo))) as pool:
            for (path, _), record in zip(todo, pool.imap(_cell_worker, [a for _, a in todo])):
                _write_json(path, record)
    else:
        for path, args in todo:
            log.info("grid: cell %s seed %s", args[0], args[2])
            _write_json(path, run_cell(*args))
    return collect_grid(spec, out)


def _write_json(path: Path, record) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(_jsonable(record), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def collect_grid(spec: GridSpec, out_dir) -> dict:
    out = Path(out_dir)
    per_seed, medians = [], []
    for name in spec.cells:
        cell_rows = []
        for seed in spec.seeds:
            rec = _unjson(json.loads((out / "cells" / f"{name}__seed{seed}.json").read_text(encoding="utf-8")))
            summary = rec.get("summary", {}).get("all", {})
            row = {
                "cell": name,
                "seed": seed,
                "status": rec["status"],
                "accuracy": summary.get("accuracy"),
                "psnr_exterior": summary.get("psnr_exterior"),
                "psnr_full": summary.get("psnr_full"),
                "final_loss": rec.get("final_loss"),
                "train_seconds": rec.get("train_seconds"),
                "tasks": {k: v for k, v in rec.get("summary", {}).items() if k != "all"},
            }
            per_seed.append(row)
            cell_rows.append(row)
        medians.append(
            {
                "cell": name,
                "seed": "median",
                "status": "ok" if all(r["status"] == "ok" for r in cell_rows) else "diverged",
                **{k: median(r[k] for r in cell_rows) for k in ("accuracy", "psnr_exterior", "psnr_full", "final_loss", "train_seconds")},
            }
        )
    table = {"per_seed": per_seed, "median": medians, "reference": FULL_SCALE_REFERENCE, "tau": spec.tau, "guidance": asdict(spec.guidance)}
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=GRID_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in per_seed + medians:
            w.writerow({k: _fmt(row.get(k)) for k in GRID_FIELDS})
    (out / "results.json").write_text(json.dumps(_jsonable(table), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return table


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6g}"
    return "" if v is None else v


def median_row(table: dict, cell: str) -> dict:
    for row in table["median"]:
        if row["cell"] == cell:
            return row
    raise KeyError(cell)


# ---------------------------------------------------------------------------
# profiling


def attention_macs(tokens: int, width: int) -> int:
    """Per-block multiply-adds: 2 T^2 d for scores and mixing, 4 T d^2 for q/k/v/o."""
    return 2 * tokens * tokens * width + 4 * tokens * width * width


def _median_time(fn, warmup: int, iters: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def profile(cfg: ModelConfig, clip_shape=(17, 64, 64), batch: int = 1, with_ref: bool = False, iters: int = 5, warmup: int = 1, seed: int = 0) -> dict:
    """Exact token counts, parameter registry sums, analytic MACs and median wall-clock step times."""
    n_frames, height, width = clip_shape
    n, h, w = latent_shape(n_frames, height, width, cfg.vae_factors)
    gen = rng_mod.stream(seed, "profile")
    z = gen.standard_normal((batch, n, cfg.channels, h, w)).astype(np.float32)
    z_src = gen.standard_normal(z.shape).astype(np.float32)
    z_msk = np.zeros((batch, n, 1, h, w), dtype=np.float32)
    z_ref = gen.standard_normal((batch, 1, cfg.channels, h, w)).astype(np.float32) if with_ref else None
    params = ed.init_params(cfg, seed)
    if cfg.tuning == "LoRA":
        params = ed.lora_attach(params, cfg.lora_rank, cfg.lora_alpha, seed)
    trainable = ed.trainable_names(params, cfg)
    seq = ed.assemble_tokens(z, z_src, z_msk, z_ref, params, cfg)
    t = np.full(batch, 0.5, dtype=np.float32)
    ids = [[2, 3]] * batch

    def denoise():
        ed.predict(params, cfg, z, t, ids, z_src, z_msk, z_ref)

    state = OptState(lr=0.0)
    fake = Batch(z, t, z_src, ids, z_src, z_msk, z_ref, np.full(batch, with_ref))

    def train_step():
        with GradTape() as tape:
            tracked = dict(params)
            tracked.update({k: tape.watch(k, params[k]) for k in trainable})
            grads = tape.gradient(batch_loss(tracked, cfg, fake))
        adamw_step(params, grads, state)

    iters = max(iters, 5)
    return {
        "conditioning": cfg.conditioning,
        "mask_injection": cfg.mask_injection,
        "tuning": cfg.tuning,
        "clip": "x".join(str(v) for v in clip_shape),
        "seq_len": len(seq),
        "tgt_tokens": seq.counts["tgt"],
        "counts": dict(seq.counts),
        "params_total": ed.count(params),
        "params_trainable": ed.count(params, trainable),
        "attn_macs_per_block": attention_macs(len(seq), cfg.width),
        "denoise_s": _median_time(denoise, warmup, iters),
        "train_s": _median_time(train_step, warmup, iters),
    }


PROFILE_FIELDS = ["conditioning", "mask_injection", "tuning", "clip", "seq_len", "tgt_tokens", "params_total", "params_trainable", "attn_macs_per_block", "denoise_s", "train_s"]


def write_profile(rows, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "profile.csv", out / "profile.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PROFILE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in PROFILE_FIELDS})
    json_path.write_text(json.dumps({"rows": rows, "reference": FULL_SCALE_REFERENCE}, indent=1) + "\n", encoding="utf-8")
    return csv_path, json_path
