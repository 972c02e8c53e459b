import numpy as np
import pytest

from conftest import trained_like
from v2vforge import rng
from v2vforge.model import init_params, tokenize
from v2vforge.model.editor import backbone_names, checksum, predict
from v2vforge.toy import ToySpec, caption_items, generate_items
from v2vforge.train import (
    GuidanceConfig,
    TrainConfig,
    TrainingDiverged,
    augment_reference,
    branch_inputs,
    cfg_combine,
    encode_inputs,
    examples_from_captions,
    examples_from_items,
    finetune_editor,
    make_batch,
    pretrain_backbone,
    probe_loss,
    sample_latents,
    to_model,
)
from v2vforge.model.vae import encode_array

SPEC = ToySpec(tasks=("recolor", "remove"), count=6, frames=5)


@pytest.fixture(scope="module")
def examples():
    from v2vforge.model import ModelConfig

    cfg = ModelConfig(width=24, depth=2, heads=2, lora_rank=2, lora_alpha=4.0)
    return examples_from_items(generate_items(SPEC, 1), cfg.vocab)


def test_cfg_combine_endpoints_and_collinearity():
    gen = np.random.default_rng(0)
    u = gen.standard_normal((3, 4)).astype(np.float32)
    c = gen.standard_normal((3, 4)).astype(np.float32)
    assert np.array_equal(cfg_combine(u, c, 1.0), c)
    assert np.array_equal(cfg_combine(u, c, 0.0), u)
    s = [0.5, 2.0, 4.5]
    pts = [cfg_combine(u, c, x).astype(np.float64) for x in s]
    # equal steps in s give proportional steps in output
    assert np.allclose((pts[1] - pts[0]) / (s[1] - s[0]), (pts[2] - pts[1]) / (s[2] - s[1]), atol=1e-6)
    with pytest.raises(ValueError):
        cfg_combine(u, c[:2], 1.0)


def test_branch_inputs_variants():
    ids = [[3, 4]]
    un, co = branch_inputs("PromptOnly", "S", "M", "R", ids)
    assert un == dict(z_src="S", z_msk="M", z_ref="R", ids=[[0]]) and co["ids"] == ids
    un, co = branch_inputs("PromptPlusRef", "S", "M", "R", ids)
    assert un["z_ref"] is None and un["ids"] == [[0]] and co["z_ref"] == "R"
    with pytest.raises(ValueError):
        branch_inputs("PromptPlusRef", "S", None, None, ids)


@pytest.mark.parametrize("variant", ["PromptOnly", "PromptPlusRef"])
def test_guided_sampler_endpoints(tiny_cfg, examples, variant):
    cfg = tiny_cfg
    params = trained_like(cfg)
    gen = np.random.default_rng(1)
    for k in ("src_embed.w", "ref_embed.w"):
        params[k] = (0.3 * gen.standard_normal(params[k].shape)).astype(np.float32)
    z_src, _, z_ref = encode_inputs(cfg, [e.src for e in examples[:2]], refs=[e.tgt[:1] for e in examples[:2]])
    ids = [e.ids for e in examples[:2]]
    run = lambda s, branch=None: sample_latents(  # noqa: E731
        params, cfg, z_src, ids, GuidanceConfig(s, variant, steps=2), seed=4, z_ref=z_ref, branch=branch
    )
    assert np.array_equal(run(1.0), run(1.0, "cond"))
    assert np.array_equal(run(1.0), run(1.0))
    assert not np.array_equal(run(3.0), run(1.0))


def test_sampler_deterministic_per_seed(tiny_cfg, examples):
    params = trained_like(tiny_cfg)
    z_src, _, _ = encode_inputs(tiny_cfg, [examples[0].src])
    g = GuidanceConfig(2.0, steps=3)
    a = sample_latents(params, tiny_cfg, z_src, [examples[0].ids], g, seed=5)
    b = sample_latents(params, tiny_cfg, z_src, [examples[0].ids], g, seed=5)
    c = sample_latents(params, tiny_cfg, z_src, [examples[0].ids], g, seed=6)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_sampler_zero_scale_is_uncond_branch(tiny_cfg, examples):
    params = trained_like(tiny_cfg)
    z_src, _, _ = encode_inputs(tiny_cfg, [examples[0].src])
    g = GuidanceConfig(0.0, steps=3)
    run = lambda branch=None: sample_latents(params, tiny_cfg, z_src, [examples[0].ids], g, seed=2, branch=branch)  # noqa: E731
    assert np.array_equal(run(), run("uncond"))
    with pytest.raises(ValueError):
        run("both")


def test_caption_items_cover_instruction_words():
    spec = ToySpec(count=3, frames=5)
    plain = caption_items(spec, 0, instructions=False)
    pairs = caption_items(spec, 0)
    assert len(plain) == 3 and len(pairs) == 6
    items = generate_items(spec, 0)
    assert [c for _, c in pairs[3:]] == [it.instruction for it in items]
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(pairs[:3], pairs[3:]))


def test_augment_reference_shape_and_range():
    frame = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)
    out = augment_reference(frame, rng.stream(0, "x"), 0.8, 10.0)
    assert out.shape == frame.shape and out.min() >= 0 and out.max() <= 1
    same = augment_reference(frame, rng.stream(0, "x"), 1.0, 0.0)
    assert np.allclose(same, frame, atol=1e-6)


def test_make_batch_flow_targets(tiny_cfg, examples):
    tc = TrainConfig(p_transition=1.0, p_ref_drop=0.0, p_prompt_drop=0.0, batch_size=4)
    batch = make_batch(examples, np.arange(4), tiny_cfg, tc, rng.stream(0, "b"), editor=True)
    assert batch.has_ref.all() and batch.z_ref.shape[1] == 1
    # transitions always switch on mid-clip, so every mask has both off and on frames
    for m in batch.masks:
        on = m.reshape(m.shape[0], -1).max(axis=1)
        assert on[0] == 0 and on[-1] == 1
    plain = make_batch(examples, np.arange(4), tiny_cfg, TrainConfig(p_transition=0.0, p_ref_drop=1.0), rng.stream(0, "b"), True)
    assert not plain.has_ref.any() and plain.z_ref is None
    # x_t = (1-t) z + t eps and v = eps - z, so x_t - t v recovers the clean latent
    clean = to_model(np.stack([encode_array(examples[i].tgt, tiny_cfg.vae_factors) for i in range(4)]))
    tb = plain.t[:, None, None, None, None]
    assert np.allclose(plain.x_t - tb * plain.v, clean, atol=1e-5)


def test_reference_drop_one_never_uses_references(tiny_cfg, examples):
    bb = init_params(tiny_cfg)
    res = finetune_editor(bb, tiny_cfg, examples, tiny_cfg, TrainConfig(steps=3, batch_size=2, p_ref_drop=1.0))
    assert res.ref_batches == 0
    res = finetune_editor(bb, tiny_cfg, examples, tiny_cfg, TrainConfig(steps=3, batch_size=2, p_ref_drop=0.0))
    assert res.ref_batches == 3


def test_lora_finetune_leaves_backbone_untouched(tiny_cfg, examples):
    bb = trained_like(tiny_cfg)
    before = checksum(bb, backbone_names(bb))
    res = finetune_editor(bb, tiny_cfg, examples, tiny_cfg, TrainConfig(steps=4, batch_size=2, lr=1e-2))
    assert checksum(res.params, backbone_names(bb)) == before
    assert any(np.abs(v).max() > 0 for k, v in res.params.items() if k.endswith(".lora_B"))
    assert np.abs(res.params["src_embed.w"]).max() > 0


def test_zero_lr_keeps_probe_loss(tiny_cfg, examples):
    bb = trained_like(tiny_cfg)
    cfg = tiny_cfg.replace(tuning="Full")
    start = finetune_editor(bb, tiny_cfg, examples, cfg, TrainConfig(steps=0))
    res = finetune_editor(bb, tiny_cfg, examples, cfg, TrainConfig(steps=3, batch_size=2, lr=0.0))
    assert probe_loss(res.params, cfg, examples) == probe_loss(start.params, cfg, examples)


def test_training_is_deterministic_and_learns(tiny_cfg, examples):
    bb = trained_like(tiny_cfg)
    cfg = tiny_cfg.replace(tuning="Full")
    tc = TrainConfig(steps=25, batch_size=4, lr=3e-3, p_transition=0.0)
    a = finetune_editor(bb, tiny_cfg, examples, cfg, tc)
    b = finetune_editor(bb, tiny_cfg, examples, cfg, tc)
    assert [r[1] for r in a.log] == [r[1] for r in b.log]
    before = probe_loss(finetune_editor(bb, tiny_cfg, examples, cfg, TrainConfig(steps=0)).params, cfg, examples)
    assert probe_loss(a.params, cfg, examples) < before


def test_prior_training_and_divergence(tiny_cfg):
    pairs = caption_items(ToySpec(count=4, frames=5), 0)
    ex = examples_from_captions(pairs, tiny_cfg.vocab)
    res = pretrain_backbone(tiny_cfg, ex, TrainConfig(steps=3, batch_size=2, lr=1e-3))
    assert len(res.log) == 3 and all(np.isfinite(r[1]) for r in res.log)
    with pytest.raises(TrainingDiverged), np.errstate(all="ignore"):
        pretrain_backbone(tiny_cfg, ex, TrainConfig(steps=3, batch_size=2, lr=1e30))


def test_finetune_rejects_mismatched_backbone(tiny_cfg, examples):
    with pytest.raises(ValueError):
        finetune_editor(init_params(tiny_cfg), tiny_cfg, examples, tiny_cfg.replace(width=32, heads=2), TrainConfig(steps=1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(p_ref_drop=1.5)
    with pytest.raises(ValueError):
        GuidanceConfig(variant="Both")
    with pytest.raises(ValueError):
        GuidanceConfig(scale=-1)
