"""``v2vforge`` command line: one subcommand per pipeline stage or experiment.

Exit codes: 0 success, 1 data error, 2 usage or configuration error.
stdout carries a human log; machine output goes to files under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .affine import InfeasiblePose, lift_pair, sample_trajectory
from .autodiff.checkpoint import CheckpointError
from .captions import (
    CaptionSegment,
    RewriterError,
    detect_scene_cuts,
    downsample,
    filter_segment,
    imperativize,
    slice_triple,
)
from .config import ConfigError, RunConfig, load_config
from .degrade import KINDS, apply_degradation, parse_kind
from .media import (
    ContainerError,
    EditTriple,
    Image,
    VideoClip,
    import_png_dir,
    read_container,
    read_image,
    read_manifest,
    read_mask,
    validate_manifest,
    write_container,
    write_manifest,
)
from .rng import default_seed
from .transitions import (
    RegionSpec,
    TransitionSpec,
    compose_transition,
    make_border_mask,
    make_spatial_mask,
    make_temporal_mask,
)

log = logging.getLogger("v2vforge")


class DataError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


DATA_ERRORS = (DataError, ContainerError, CheckpointError, InfeasiblePose, RewriterError, FileNotFoundError, OSError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# output bookkeeping


class Run:
    """Tracks files written by one invocation; writes outputs.json and the effective config."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = cfg.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths) -> None:
        for p in paths:
            rel = str(Path(p).relative_to(self.out)) if Path(p).is_relative_to(self.out) else str(p)
            if rel not in self.files:
                self.files.append(rel)

    def finish(self, extra: dict | None = None) -> None:
        cfg_path = self.cfg.write(self.out / "effective_config.ini")
        self.add(cfg_path)
        record = {"command": self.command, "version": __version__, "seed": self.cfg.seed, "outputs": sorted(self.files)}
        if extra:
            record.update(extra)
        (self.out / "outputs.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# input helpers


def _load_clip(path) -> VideoClip:
    p = Path(path)
    if p.is_dir():
        return import_png_dir(p)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    return read_container(p)


def _load_image(path) -> Image:
    p = Path(path)
    if p.suffix.lower() in (".png", ".jpg", ".jpeg"):
        from PIL import Image as PILImage

        with PILImage.open(p) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return Image(arr.transpose(2, 0, 1)[None], "u8")
    if not p.exists():
        raise DataError(f"no such file: {p}")
    return read_image(p)


def _box(text: str):
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"box must be x,y,w,h integers, got {text!r}") from None
    if len(parts) != 4:
        raise UsageError(f"box must be x,y,w,h, got {text!r}")
    return parts


def _clip_shape(text: str):
    try:
        parts = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"clip shape must look like 17x64x64, got {text!r}") from None
    if len(parts) != 3:
        raise UsageError(f"clip shape must be FRAMESxHEIGHTxWIDTH, got {text!r}")
    return parts


def _parse_params(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
        if isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_lift(args, cfg: RunConfig, run: Run) -> int:
    src, tgt = _load_image(args.src), _load_image(args.tgt)
    if src.shape != tgt.shape:
        raise DataError(f"source {src.shape} and target {tgt.shape} differ")
    traj = sample_trajectory(args.frames, (src.width, src.height), cfg.seed)
    pair = lift_pair(src, tgt, traj)
    stem = args.id
    sp, tp = run.path(f"{stem}.src.rvid"), run.path(f"{stem}.tgt.rvid")
    write_container(pair.source, sp)
    write_container(pair.target, tp)
    poses = run.path(f"{stem}.poses.json")
    poses.write_text(json.dumps({"reversed": traj.reversed, "source": pair.source_poses, "target": pair.target_poses}, indent=1) + "\n")
    man = run.path("manifest.jsonl")
    write_manifest([EditTriple(stem, sp.name, tp.name, args.instruction, args.edit_type, "i2i-lift")], man)
    run.add(sp, tp, poses, man)
    print(f"lifted {args.frames} frames ({'reversed' if traj.reversed else 'forward'} path) -> {run.out}")
    return 0


def cmd_slice(args, cfg: RunConfig, run: Run) -> int:
    p = cfg.slice_params()
    video = _load_clip(args.video)
    down = downsample(video, args.fps, p.fps_down)
    cuts = detect_scene_cuts(down, p.cut_threshold) if down.frames > 1 else []
    segments = []
    with open(args.captions, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                segments.append(CaptionSegment(rec.get("video_id", Path(args.video).stem), rec["caption"], float(rec["t_start"]), float(rec["t_end"]), args.fps, video.frames))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{args.captions}:{n}: bad caption record ({exc})") from exc
    triples, rows = [], []
    for i, seg in enumerate(segments):
        decision = filter_segment(seg, cuts, p)
        reason = decision.reason
        if decision:
            instruction = imperativize(seg.caption, args.rewriter)
            if not instruction:
                decision, reason = False, "no-instruction"
        rows.append({"segment": i, "caption": seg.caption, "t_start": seg.t_start, "t_end": seg.t_end, "accepted": bool(decision), "reason": reason or ""})
        if not decision:
            continue
        src, tgt = slice_triple(down, seg, p)
        stem = f"{seg.video_id}-{i:04d}"
        sp, tp = run.path(f"clips/{stem}.src.rvid"), run.path(f"clips/{stem}.tgt.rvid")
        write_container(src, sp)
        write_container(tgt, tp)
        run.add(sp, tp)
        triples.append(EditTriple(stem, f"clips/{stem}.src.rvid", f"clips/{stem}.tgt.rvid", instruction, "action", "caption-slice"))
    man = run.path("manifest.jsonl")
    write_manifest(triples, man)
    dec = run.path("decisions.csv")
    import csv

    with open(dec, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["segment"])
        w.writeheader()
        w.writerows(rows)
    run.add(man, dec)
    print(f"{len(triples)} of {len(segments)} segments accepted; {len(cuts)} scene cuts")
    return 0


def cmd_transition(args, cfg: RunConfig, run: Run) -> int:
    src, tgt = _load_clip(args.src), _load_clip(args.tgt)
    window = args.window if args.window is not None else cfg["transition"]["window"]
    try:
        spec = TransitionSpec(args.onset, window)
        clip, mask = compose_transition(src, tgt, spec)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    cp, mp = run.path("transition.rvid"), run.path("transition.mask.rvid")
    write_container(clip, cp)
    write_container(mask, mp, mask=True)
    run.add(cp, mp)
    print(f"composed {clip.frames} frames, onset {args.onset}, window {window}")
    return 0


def cmd_maskgen(args, cfg: RunConfig, run: Run) -> int:
    dims = (args.width, args.height)
    try:
        if args.kind == "temporal":
            if args.onset is None:
                raise UsageError("temporal masks need --onset")
            mask = make_temporal_mask(args.frames, args.onset, dims)
        elif args.kind == "spatial":
            if not args.box:
                raise UsageError("spatial masks need --box x,y,w,h")
            region = RegionSpec.box(*_box(args.box[0])) if len(args.box) == 1 else RegionSpec.per_frame([_box(b) for b in args.box])
            mask = make_spatial_mask(args.frames, dims, region)
        else:
            mask = make_border_mask(args.frames, dims, args.border)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    path = run.path(args.name)
    write_container(mask, path, mask=True)
    run.add(path)
    print(f"{args.kind} mask {args.frames}x{args.height}x{args.width}: {int(mask.data.sum())} active pixels")
    return 0


def _degrade_one(job):
    path, kind_name, params, seed, out_dir = job
    clip = _load_clip(path)
    kind = parse_kind(kind_name, **params)
    out, mask = apply_degradation(clip, kind, seed=seed, return_mask=True)
    stem = Path(path).stem
    written = []
    op = Path(out_dir) / f"{stem}.{kind_name}.rvid"
    write_container(out, op)
    written.append(op)
    mp = None
    if mask is not None:
        mp = Path(out_dir) / f"{stem}.{kind_name}.mask.rvid"
        write_container(mask, mp, mask=True)
        written.append(mp)
    return stem, str(path), op, mp, written


def cmd_degrade(args, cfg: RunConfig, run: Run) -> int:
    params = _parse_params(args.param)
    try:
        parse_kind(args.kind, **params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    jobs = [(p, args.kind, params, cfg.seed, str(run.out)) for p in args.input]
    n_jobs = int(cfg["run"]["jobs"])
    if n_jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_degrade_one, jobs))
    else:
        results = [_degrade_one(j) for j in jobs]
    triples = []
    for stem, src_path, op, mp, written in results:
        run.add(*written)
        # the degraded clip is the control signal (source); the original is the target
        triples.append(EditTriple(f"{stem}-{args.kind}", op.name, str(Path(src_path).resolve()), args.instruction or f"restore from {args.kind}", "control", "degrade", mp.name if mp else None))
    man = run.path("manifest.jsonl")
    write_manifest(triples, man)
    run.add(man)
    print(f"{args.kind}: {len(results)} clip(s) -> {run.out}")
    return 0


def cmd_synth_toy(args, cfg: RunConfig, run: Run) -> int:
    from .toy import synth_toy_dataset

    spec = cfg.toy()
    triples = synth_toy_dataset(spec, cfg.seed, run.out)
    run.add(run.out / "manifest.jsonl", *[run.out / p for t in triples for p in (t.src, t.tgt, t.mask)])
    print(f"{len(triples)} toy triples ({', '.join(spec.tasks)}) -> {run.out / 'manifest.jsonl'}")
    return 0


def _train_logs(run: Run, result, name: str, plot: bool):
    lp = run.path(f"{name}_log.csv")
    result.write_log(lp)
    run.add(lp)
    if plot:
        from .report import plot_loss

        run.add(plot_loss(result.log, run.path(f"{name}_loss.png")))


def cmd_pretrain(args, cfg: RunConfig, run: Run) -> int:
    from .model import save_model
    from .toy import caption_items, items_from_manifest
    from .train import examples_from_captions, pretrain_backbone

    model_cfg = cfg.model()
    tc = cfg.train()
    if args.manifest:
        pairs = [(it.tgt, it.caption) for it in items_from_manifest(args.manifest)]
    else:
        pairs = caption_items(cfg.toy(), cfg.seed)
    examples = examples_from_captions(pairs, model_cfg.vocab)
    result = pretrain_backbone(model_cfg, examples, tc, seed=cfg.seed, on_step=_progress(tc.steps))
    ck = save_model(result.params, model_cfg, run.path("backbone.rtns"), {"stage": "pretrain"})
    run.add(ck, Path(str(ck) + ".json"))
    _train_logs(run, result, "pretrain", args.plot)
    first, last = _ends(result.log)
    print(f"pretrained {tc.steps} steps; loss {first:.4f} -> {last:.4f}")
    return 0


def _ends(log_rows):
    if not log_rows:
        return float("nan"), float("nan")
    k = max(1, len(log_rows) // 10)
    return float(np.mean([r[1] for r in log_rows[:k]])), float(np.mean([r[1] for r in log_rows[-k:]]))


def _progress(total):
    every = max(1, total // 10)

    def hook(step, loss):
        if (step + 1) % every == 0:
            log.info("step %d/%d loss %.4f", step + 1, total, loss)

    return hook


def cmd_train(args, cfg: RunConfig, run: Run) -> int:
    from .model import load_model, save_model
    from .model import editor as ed
    from .toy import items_from_manifest
    from .train import examples_from_items, finetune_editor

    backbone, backbone_cfg, _ = load_model(args.backbone)
    model_cfg = cfg.model().replace(vocab=backbone_cfg.vocab)
    tc = cfg.train()
    items = items_from_manifest(args.manifest)
    examples = examples_from_items(items, model_cfg.vocab, with_masks=tc.use_masks)
    try:
        result = finetune_editor(backbone, backbone_cfg, examples, model_cfg, tc, on_step=_progress(tc.steps))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    before = ed.checksum(backbone, ed.backbone_names(backbone))
    after = ed.checksum(result.params, ed.backbone_names(result.params))
    ck = save_model(result.params, model_cfg, run.path("editor.rtns"), {"stage": "finetune", "backbone_checksum": before})
    run.add(ck, Path(str(ck) + ".json"))
    _train_logs(run, result, "train", args.plot)
    first, last = _ends(result.log)
    frozen = "unchanged" if before == after else "updated"
    print(f"fine-tuned {model_cfg.tuning}-{model_cfg.conditioning} {tc.steps} steps; loss {first:.4f} -> {last:.4f}; backbone {frozen}")
    return 0


def cmd_infer(args, cfg: RunConfig, run: Run) -> int:
    from .model import load_model
    from .train import sample_video

    params, model_cfg, _ = load_model(args.ckpt)
    guidance = cfg.guidance()
    source = _load_clip(args.src)
    mask = read_mask(args.mask) if args.mask else None
    ref = _load_image(args.ref) if args.ref else None
    try:
        out = sample_video(params, model_cfg, source, args.instruction, mask, ref, guidance, seed=cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    op = run.path("output.rvid")
    write_container(out, op)
    run.add(op)
    print(f"sampled {out.frames} frames, {guidance.variant} s={guidance.scale} steps={guidance.steps} -> {op}")
    return 0


def cmd_eval(args, cfg: RunConfig, run: Run) -> int:
    import csv

    from .evaluate import finite_or_sentinel, median
    from .experiments import evaluate_editor
    from .model import load_model
    from .toy import items_from_manifest

    params, model_cfg, _ = load_model(args.ckpt)
    items = items_from_manifest(args.manifest)
    rows = evaluate_editor(params, model_cfg, items, cfg.guidance(), cfg["eval"]["tau"], cfg.train().use_masks, cfg.seed)
    cp, jp = run.path("metrics.csv"), run.path("metrics.json")
    with open(cp, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "task", "accuracy", "psnr_exterior", "psnr_full"])
        w.writeheader()
        for r in rows:
            w.writerow({k: finite_or_sentinel(v) if isinstance(v, float) else v for k, v in r.items()})
    summary = {k: finite_or_sentinel(median(r[k] for r in rows)) for k in ("accuracy", "psnr_exterior", "psnr_full")}
    jp.write_text(json.dumps({"summary": summary, "items": [{k: finite_or_sentinel(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows]}, indent=1) + "\n")
    run.add(cp, jp)
    if args.plot:
        from .report import plot_metrics

        run.add(*plot_metrics(rows, run.out))
    print(f"{len(rows)} items: median accuracy {summary['accuracy']}, exterior PSNR {summary['psnr_exterior']}")
    return 0


def cmd_profile(args, cfg: RunConfig, run: Run) -> int:
    from .experiments import profile, write_profile

    base = cfg.model()
    shape = _clip_shape(args.clip)
    rows = []
    for tuning in ("Full", "LoRA"):
        for cond in ("EmbedAdd", "SeqCat"):
            mcfg = base.replace(conditioning=cond, tuning=tuning, mask_injection="AddToSrc")
            rows.append(profile(mcfg, shape, batch=args.batch, with_ref=args.ref, iters=args.iters, seed=cfg.seed))
            r = rows[-1]
            print(f"{tuning:4s} {cond:8s} T={r['seq_len']:5d} trainable={r['params_trainable']:8d} train={r['train_s'] * 1e3:8.1f} ms")
    run.add(*write_profile(rows, run.out))
    if args.plot:
        from .report import plot_profile

        run.add(*plot_profile(rows, run.out))
    return 0


def cmd_gridrun(args, cfg: RunConfig, run: Run) -> int:
    from .experiments import GridSpec, run_grid
    from .model import load_model
    from .toy import generate_items, items_from_manifest

    backbone, backbone_cfg, _ = load_model(args.backbone)
    base = cfg.model().replace(vocab=backbone_cfg.vocab)
    if base.backbone_key() != backbone_cfg.backbone_key():
        raise DataError("[model] settings do not match the backbone checkpoint")
    train_items = items_from_manifest(args.manifest)
    if args.heldout:
        heldout = items_from_manifest(args.heldout)
    else:
        spec = cfg.toy()
        from dataclasses import replace

        heldout = generate_items(replace(spec, count=cfg["eval"]["heldout_count"]), cfg.seed + 100003)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    kw = dict(seeds=seeds, train=cfg.train(), guidance=cfg.guidance(), tau=cfg["eval"]["tau"])
    grid = GridSpec.conditioning_tuning(**kw) if args.grid == "conditioning" else GridSpec.mask_variants(**kw)
    table = run_grid(grid, backbone, backbone_cfg, train_items, heldout, run.out, jobs=int(cfg["run"]["jobs"]))
    run.add(run.out / "results.csv", run.out / "results.json", *sorted((run.out / "cells").glob("*.json")))
    if args.plot:
        from .report import plot_grid

        run.add(*plot_grid(table, run.out))
    for row in table["median"]:
        print(f"{row['cell']:22s} acc={row['accuracy']} psnr_ext={row['psnr_exterior']} status={row['status']}")
    return 0


def cmd_validate(args, cfg: RunConfig, run: Run) -> int:
    try:
        triples = read_manifest(args.manifest)
    except (ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable manifest: {exc}") from exc
    root = Path(args.root) if args.root else Path(args.manifest).parent
    problems = validate_manifest(triples, root)
    report = run.path("violations.txt")
    report.write_text("".join(p + "\n" for p in problems), encoding="utf-8")
    run.add(report)
    for p in problems:
        print(p)
    print(f"{len(problems)} violations in {len(triples)} triples")
    return 0 if not problems else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; flags override its values")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help=f"global seed (falls back to $V2VFORGE_SEED, then 0)")
    common.add_argument("--jobs", type=int, help="worker processes for per-item stages")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any config key")

    parser = _Parser(prog="v2vforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("lift", parents=[common], help="lift an image edit pair into a video pair")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--frames", type=int, default=81)
    p.add_argument("--instruction", default="edit the image")
    p.add_argument("--edit-type", default="i2i")
    p.add_argument("--id", default="lifted")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("slice", parents=[common], help="slice a captioned video into action-edit triples")
    p.add_argument("--video", required=True)
    p.add_argument("--captions", required=True, help="JSONL with caption, t_start, t_end")
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--frames", type=int, dest="slice_frames")
    p.add_argument("--fps-down", type=float)
    p.add_argument("--rewriter", help="external command that rewrites a caption read from stdin")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("transition", parents=[common], help="compose a transition-supervised target")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--onset", type=int, required=True)
    p.add_argument("--window", type=int)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("maskgen", parents=[common], help="write a temporal, spatial or border mask video")
    p.add_argument("--kind", choices=["temporal", "spatial", "border"], required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--onset", type=int)
    p.add_argument("--box", action="append", help="x,y,w,h; repeat once per frame for moving boxes")
    p.add_argument("--border", type=int, default=4)
    p.add_argument("--name", default="mask.rvid")
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("degrade", parents=[common], help="apply a model-free control transform")
    p.add_argument("--input", action="append", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--instruction")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("synth-toy", parents=[common], help="generate the procedural toy edit dataset")
    p.add_argument("--tasks", help="comma list from recolor, remove, shape-swap, grayscale-style")
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_synth_toy)

    def model_flags(p):
        p.add_argument("--conditioning", choices=["SeqCat", "EmbedAdd"])
        p.add_argument("--tuning", choices=["Full", "LoRA"])
        p.add_argument("--mask-injection", choices=["AddToSrc", "AddToTgt", "DownsampleAddToSrc", "SeqCatMask"])
        p.add_argument("--train-steps", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--plot", action="store_true", help="also render PNG figures")

    p = sub.add_parser("pretrain", parents=[common], help="train the toy text-to-video prior")
    p.add_argument("--manifest", help="use target clips and instructions from this manifest instead of toy captions")
    model_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", parents=[common], help="fine-tune the editor from a prior checkpoint")
    p.add_argument("--backbone", required=True)
    p.add_argument("--manifest", required=True)
    model_flags(p)
    p.set_defaults(func=cmd_train)

    def guidance_flags(p):
        p.add_argument("--cfg-scale", type=float)
        p.add_argument("--cfg-variant", choices=["PromptOnly", "PromptPlusRef"])
        p.add_argument("--steps", type=int, help="Euler sampler steps")

    p = sub.add_parser("infer", parents=[common], help="edit one clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--mask")
    p.add_argument("--ref")
    guidance_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score an editor on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--plot", action="store_true")
    guidance_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", parents=[common], help="token counts and step times per configuration")
    p.add_argument("--clip", default="17x64x64", help="FRAMESxHEIGHTxWIDTH")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--ref", action="store_true", help="include a reference stream")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gridrun", parents=[common], help="train and score an ablation grid")
    p.add_argument("--backbone", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--heldout")
    p.add_argument("--grid", choices=["conditioning", "mask"], default="conditioning")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--train-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--plot", action="store_true")
    guidance_flags(p)
    p.set_defaults(func=cmd_gridrun)

    p = sub.add_parser("validate", parents=[common], help="check a manifest and the files it names")
    p.add_argument("manifest")
    p.add_argument("--root")
    p.set_defaults(func=cmd_validate)
    return parser


_FLAG_KEYS = {
    "out": "run.out",
    "jobs": "run.jobs",
    "log_level": "run.log_level",
    "conditioning": "model.conditioning",
    "tuning": "model.tuning",
    "mask_injection": "model.mask_injection",
    "train_steps": "train.steps",
    "lr": "train.lr",
    "cfg_scale": "guidance.scale",
    "cfg_variant": "guidance.variant",
    "steps": "guidance.steps",
    "tau": "eval.tau",
    "slice_frames": "slice.frames",
    "fps_down": "slice.fps_down",
    "count": "toy.count",
    "tasks": "toy.tasks",
}


def _overrides(args) -> dict:
    out = {}
    seed = args.seed if args.seed is not None else default_seed(None) if _env_seed() else None
    if seed is not None:
        out["run.seed"] = seed
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    return out


def _env_seed() -> bool:
    import os

    from .rng import SEED_ENV

    return bool(os.environ.get(SEED_ENV, "").strip())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.model(), cfg.train(), cfg.guidance(), cfg.toy(), cfg.slice_params()
    except (ConfigError, ValueError) as exc:
        print(f"v2vforge: configuration error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=cfg["run"]["log_level"], format="%(levelname)s %(name)s: %(message)s", stream=sys.stdout)
    run = Run(cfg, args.command)
    try:
        code = args.func(args, cfg, run)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"v2vforge: error: {exc}", file=sys.stderr)
        return 2
    except (*DATA_ERRORS, ValueError) as exc:
        print(f"v2vforge: data error: {exc}", file=sys.stderr)
        run.finish({"status": "error", "error": str(exc)})
        return 1
    run.finish({"status": "ok" if code == 0 else "failed"})
    return code


if __name__ == "__main__":
    sys.exit(main())
