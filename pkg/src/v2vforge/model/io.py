"""Self-describing checkpoints: RTNS tensor file plus a JSON config sidecar."""

from __future__ import annotations

import json
from pathlib import Path

from ..autodiff.checkpoint import CheckpointError, load_tensors, save_tensors
from .config import ModelConfig


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(params, cfg: ModelConfig, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_tensors(params, path)
    meta = {"model": json.loads(cfg.to_json())}
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_model(path):
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise CheckpointError(f"missing config sidecar {side}")
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt config sidecar {side}: {exc}") from exc
    cfg = ModelConfig.from_dict(meta["model"])
    return load_tensors(path), cfg, meta
