"""Figures for grid, profile and training-log outputs (written next to the CSV/JSON)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CAP_DB = 60.0  # where +inf PSNR is drawn


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(direction="out", length=3)


def _outdir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finite(v, cap=CAP_DB):
    if v is None:
        return math.nan
    return cap if math.isinf(v) else v


def write_series(path, xs, ys, header=("x", "y")) -> Path:
    """Plain x,y series so figures can be redrawn elsewhere."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, y in zip(xs, ys):
            w.writerow([x, y])
    return path


def plot_grid(table: dict, out_dir) -> list[Path]:
    out = _outdir(out_dir)
    cells = [r["cell"] for r in table["median"]]
    written = []
    for metric, label in (("accuracy", "edited-region accuracy"), ("psnr_exterior", "unedited-region PSNR (dB)")):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        meds = [_finite(r[metric]) for r in table["median"]]
        ax.bar(range(len(cells)), meds, color="0.75", edgecolor="0.3", width=0.6)
        for i, cell in enumerate(cells):
            pts = [_finite(r[metric]) for r in table["per_seed"] if r["cell"] == cell]
            ax.plot([i] * len(pts), pts, "o", ms=3.5, color="k")
        ax.set_xticks(range(len(cells)))
        ax.set_xticklabels(cells, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel(label)
        _style(ax)
        fig.tight_layout()
        path = out / f"grid_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
        written.append(write_series(out / f"grid_{metric}.csv", cells, meds, ("cell", metric)))
    return written


def plot_profile(rows, out_dir) -> list[Path]:
    out = _outdir(out_dir)
    labels = [f"{r['tuning']}-{r['conditioning']}" for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
    a1.bar(range(len(rows)), [r["seq_len"] for r in rows], color="0.7", edgecolor="0.3")
    a1.set_ylabel("sequence length")
    a2.bar(range(len(rows)), [r["train_s"] * 1e3 for r in rows], color="0.7", edgecolor="0.3")
    a2.set_ylabel("train step (ms)")
    for ax in (a1, a2):
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
        _style(ax)
    fig.tight_layout()
    path = out / "profile.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    series = write_series(out / "profile_train_s.csv", labels, [r["train_s"] for r in rows], ("config", "train_s"))
    return [path, series]


def plot_loss(log_rows, path, window: int = 25) -> Path:
    path = Path(path)
    _outdir(path.parent)
    steps = [r[0] for r in log_rows]
    loss = [r[1] for r in log_rows]
    smooth = []
    acc = 0.0
    for i, v in enumerate(loss):
        acc += v
        if i >= window:
            acc -= loss[i - window]
        smooth.append(acc / min(i + 1, window))
    fig, ax = plt.subplots(figsize=(4.5, 2.8))
    ax.plot(steps, loss, lw=0.5, color="0.7")
    ax.plot(steps, smooth, lw=1.2, color="k")
    ax.set_xlabel("step")
    ax.set_ylabel("flow loss")
    ax.set_yscale("log")
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metrics(rows, out_dir) -> list[Path]:
    """Per-item accuracy histogram from an eval run."""
    out = _outdir(out_dir)
    vals = [r["accuracy"] for r in rows if r["accuracy"] is not None]
    fig, ax = plt.subplots(figsize=(4.0, 2.6))
    ax.hist(vals, bins=20, range=(0, 1), color="0.7", edgecolor="0.3")
    ax.set_xlabel("edited-region accuracy")
    ax.set_ylabel("items")
    _style(ax)
    fig.tight_layout()
    path = out / "eval_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path, write_series(out / "eval_accuracy.csv", [r["id"] for r in rows], [r["accuracy"] for r in rows], ("id", "accuracy"))]
