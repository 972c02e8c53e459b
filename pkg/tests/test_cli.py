import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image as PILImage

from v2vforge.cli import main
from v2vforge.media import VideoClip, read_container, read_manifest, write_container

TINY = [
    "--set", "model.width=24", "--set", "model.depth=1", "--set", "model.heads=2",
    "--set", "model.lora_rank=2", "--set", "toy.frames=5", "--set", "toy.count=4",
    "--set", "guidance.steps=1", "--set", "train.batch_size=2",
]


def _png(path, seed):
    arr = np.random.default_rng(seed).integers(0, 256, (24, 32, 3), dtype=np.uint8)
    PILImage.fromarray(arr).save(path)
    return path


def _clip(path, n=6, seed=0):
    write_container(VideoClip(np.random.default_rng(seed).integers(0, 256, (n, 3, 8, 8), dtype=np.uint8)), path)
    return path


def test_lift_deterministic(tmp_path):
    src, tgt = _png(tmp_path / "a.png", 0), _png(tmp_path / "b.png", 1)
    for run in ("r1", "r2"):
        argv = ["lift", "--src", str(src), "--tgt", str(tgt), "--frames", "16", "--seed", "7", "--out", str(tmp_path / run)]
        assert main(argv) == 0
    for name in ("lifted.src.rvid", "lifted.tgt.rvid", "lifted.poses.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    assert read_container(tmp_path / "r1" / "lifted.src.rvid").frames == 16
    outputs = json.loads((tmp_path / "r1" / "outputs.json").read_text())
    assert "effective_config.ini" in outputs["outputs"] and outputs["seed"] == 7
    assert "seed = 7" in (tmp_path / "r1" / "effective_config.ini").read_text()


def test_seed_env_fallback(tmp_path, monkeypatch):
    src, tgt = _png(tmp_path / "a.png", 0), _png(tmp_path / "b.png", 1)
    monkeypatch.setenv("V2VFORGE_SEED", "7")
    assert main(["lift", "--src", str(src), "--tgt", str(tgt), "--frames", "4", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "outputs.json").read_text())["seed"] == 7


def test_validate_clean_and_dirty(tmp_path, capsys):
    src, tgt = _png(tmp_path / "a.png", 0), _png(tmp_path / "b.png", 1)
    main(["lift", "--src", str(src), "--tgt", str(tgt), "--frames", "4", "--out", str(tmp_path / "l")])
    capsys.readouterr()
    assert main(["validate", str(tmp_path / "l" / "manifest.jsonl"), "--out", str(tmp_path / "v")]) == 0
    assert "0 violations" in capsys.readouterr().out
    bad = tmp_path / "l" / "bad.jsonl"
    bad.write_text(json.dumps({"id": "x", "src": "lifted.src.rvid", "tgt": "missing.rvid", "instruction": ""}) + "\n")
    assert main(["validate", str(bad), "--out", str(tmp_path / "v2")]) == 1
    assert "2 violations" in capsys.readouterr().out


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["lift", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert main(["maskgen", "--kind", "temporal", "--frames", "3", "--width", "4", "--height", "4", "--set", "model.nope=1", "--out", str(tmp_path)]) == 2
    ini = tmp_path / "c.ini"
    ini.write_text("[train]\nsteps = many\n")
    assert main(["maskgen", "--kind", "temporal", "--frames", "3", "--width", "4", "--height", "4", "--config", str(ini)]) == 2
    assert main(["maskgen", "--kind", "temporal", "--frames", "3", "--width", "4", "--height", "4", "--out", str(tmp_path)]) == 2


def test_data_errors_exit_1(tmp_path):
    assert main(["transition", "--src", str(tmp_path / "nope.rvid"), "--tgt", "x", "--onset", "1", "--out", str(tmp_path)]) == 1
    a, b = _clip(tmp_path / "a.rvid"), _clip(tmp_path / "b.rvid", n=4)
    assert main(["transition", "--src", str(a), "--tgt", str(b), "--onset", "1", "--out", str(tmp_path)]) == 1
    (tmp_path / "junk.rvid").write_bytes(b"JUNK")
    assert main(["degrade", "--input", str(tmp_path / "junk.rvid"), "--kind", "negate", "--out", str(tmp_path)]) == 1


def test_masks_transition_degrade(tmp_path):
    a, b = _clip(tmp_path / "a.rvid"), _clip(tmp_path / "b.rvid", seed=1)
    out = tmp_path / "o"
    assert main(["transition", "--src", str(a), "--tgt", str(b), "--onset", "3", "--window", "2", "--out", str(out)]) == 0
    assert read_container(out / "transition.mask.rvid").data[:3].sum() == 0
    assert main(["maskgen", "--kind", "spatial", "--frames", "2", "--width", "8", "--height", "8", "--box", "1,1,3,3", "--out", str(out)]) == 0
    assert read_container(out / "mask.rvid").data.sum() == 18
    assert main(["degrade", "--input", str(a), "--kind", "posterize", "--param", "levels=3", "--out", str(out)]) == 0
    assert len(np.unique(read_container(out / "a.posterize.rvid").data)) <= 3
    assert main(["degrade", "--input", str(a), "--kind", "rect_mask", "--out", str(out)]) == 0
    triple = read_manifest(out / "manifest.jsonl")[0]
    assert triple.mask == "a.rect_mask.mask.rvid" and triple.edit_type == "control"
    assert main(["degrade", "--input", str(a), "--kind", "posterize", "--param", "levels=1", "--out", str(out)]) == 2


def test_slice_command(tmp_path):
    frames = np.zeros((200, 3, 4, 4), np.uint8)
    frames[:, 0] = (np.arange(200) % 7)[:, None, None]
    video = tmp_path / "v.rvid"
    write_container(VideoClip(frames), video)
    caps = tmp_path / "caps.jsonl"
    caps.write_text(
        json.dumps({"caption": "he sits down", "t_start": 6.0, "t_end": 9.0}) + "\n"
        + json.dumps({"caption": "he sits down", "t_start": 3.0, "t_end": 9.0}) + "\n"
    )
    out = tmp_path / "s"
    assert main(["slice", "--video", str(video), "--captions", str(caps), "--fps", "15", "--out", str(out)]) == 0
    triples = read_manifest(out / "manifest.jsonl")
    assert len(triples) == 1 and triples[0].instruction == "make him sit down"
    assert "insufficient-preamble" in (out / "decisions.csv").read_text()


@pytest.mark.slow
def test_toy_pipeline_end_to_end(tmp_path):
    data, prior, editor = tmp_path / "data", tmp_path / "prior", tmp_path / "editor"
    assert main(["synth-toy", "--out", str(data), "--seed", "1", *TINY]) == 0
    assert main(["validate", str(data / "manifest.jsonl"), "--out", str(tmp_path / "v")]) == 0
    assert main(["pretrain", "--out", str(prior), "--train-steps", "2", "--plot", *TINY]) == 0
    assert (prior / "pretrain_loss.png").exists()
    assert main(["train", "--backbone", str(prior / "backbone.rtns"), "--manifest", str(data / "manifest.jsonl"),
                 "--out", str(editor), "--train-steps", "2", *TINY]) == 0
    ck = editor / "editor.rtns"
    first = read_manifest(data / "manifest.jsonl")[0]
    assert main(["infer", "--ckpt", str(ck), "--src", str(data / first.src), "--instruction", first.instruction,
                 "--out", str(tmp_path / "i"), "--cfg-scale", "2", *TINY]) == 0
    assert read_container(tmp_path / "i" / "output.rvid").shape == read_container(data / first.src).shape
    assert main(["eval", "--ckpt", str(ck), "--manifest", str(data / "manifest.jsonl"), "--out", str(tmp_path / "e"), "--plot", *TINY]) == 0
    assert json.loads((tmp_path / "e" / "metrics.json").read_text())["items"]
    assert main(["profile", "--clip", "5x16x16", "--out", str(tmp_path / "p"), *TINY]) == 0
    assert (tmp_path / "p" / "profile.csv").read_text().count("\n") == 5
    assert main(["gridrun", "--backbone", str(prior / "backbone.rtns"), "--manifest", str(data / "manifest.jsonl"),
                 "--seeds", "0", "--train-steps", "1", "--set", "eval.heldout_count=2", "--out", str(tmp_path / "g"), "--plot", *TINY]) == 0
    assert (tmp_path / "g" / "grid_accuracy.png").exists()


def test_console_script_version():
    proc = subprocess.run([sys.executable, "-m", "v2vforge.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "v2vforge" in proc.stdout
