import itertools

import numpy as np
import pytest

from conftest import trained_like
from v2vforge.model import ModelConfig, init_params, load_model, save_model, tokenize
from v2vforge.model.editor import (
    assemble_tokens,
    conditioning_param_count,
    count,
    lora_attach,
    lora_merge,
    lora_param_count,
    mask_latent,
    patchify,
    predict,
    trainable_names,
    unpatchify,
)
from v2vforge.model.vae import decode_array, latent_shape, pool_to_latent, surrogate_decode, surrogate_encode
from v2vforge.media import VideoClip

SHAPE = (5, 16, 16)  # pixels: frames, height, width -> latent 2 x 4 x 4


def _inputs(cfg, seed, batch=2):
    gen = np.random.default_rng(seed)
    n, h, w = latent_shape(*SHAPE, cfg.vae_factors)
    z = gen.standard_normal((batch, n, 3, h, w)).astype(np.float32)
    src = gen.standard_normal(z.shape).astype(np.float32)
    mask = (gen.random((batch, SHAPE[0], 1, SHAPE[1], SHAPE[2])) < 0.5).astype(np.float32)
    ref = gen.standard_normal((batch, 1, 3, h, w)).astype(np.float32)
    return z, src, mask_latent(mask, cfg, (n, h, w)), ref


def test_latent_shapes_full_scale():
    assert latent_shape(81, 480, 832, (4, 8, 8)) == (21, 60, 104)
    lat = np.zeros((21, 3, 30, 52), np.float32)
    assert decode_array(lat, (4, 16, 16)).shape == (81, 3, 480, 832)
    with pytest.raises(ValueError):
        latent_shape(80, 480, 832, (4, 8, 8))


def test_surrogate_is_linear_and_exact_on_block_constant_clips():
    gen = np.random.default_rng(0)
    a, b = gen.random((9, 3, 8, 8)), gen.random((9, 3, 8, 8))
    ea, eb = surrogate_encode(a, (4, 4, 4)), surrogate_encode(b, (4, 4, 4))
    assert np.allclose(surrogate_encode(0.3 * a + 0.7 * b, (4, 4, 4)), 0.3 * ea + 0.7 * eb, atol=1e-6)
    lat = gen.random((3, 3, 2, 2)).astype(np.float32)
    clip = surrogate_decode(lat, (4, 4, 4))
    assert clip.shape == (9, 3, 8, 8)
    assert np.array_equal(surrogate_encode(clip, (4, 4, 4)), lat)
    # frame 0 is its own group
    assert np.allclose(ea[0], a[0].reshape(3, 2, 4, 2, 4).mean(axis=(2, 4)), atol=1e-6)


def test_pool_to_latent_uniform_bins():
    x = np.arange(8, dtype=np.float64)[:, None, None, None] * np.ones((8, 1, 4, 4))
    out = pool_to_latent(x, (2, 2, 2))
    assert out[:, 0, 0, 0].tolist() == [1.5, 5.5]


def test_patchify_round_trip():
    z = np.random.default_rng(1).standard_normal((2, 4, 3, 6, 8))
    x = patchify(z, (2, 2, 2))
    assert x.shape == (2, 2 * 3 * 4, 3 * 8)
    assert np.array_equal(unpatchify(x, (4, 6, 8), (2, 2, 2), 3).data, z)


VARIANTS = [
    (c, m)
    for c, m in itertools.product(("SeqCat", "EmbedAdd"), ("AddToSrc", "AddToTgt", "DownsampleAddToSrc", "SeqCatMask"))
    if not (c == "EmbedAdd" and m == "SeqCatMask")
]


@pytest.mark.parametrize("cond, inj", VARIANTS)
def test_fresh_editor_ignores_new_inputs(tiny_cfg, cond, inj):
    cfg = tiny_cfg.replace(conditioning=cond, mask_injection=inj)
    params = trained_like(cfg)
    ids = [tokenize("make the square red")] * 2
    outs = []
    for s in range(5):
        z, src, msk, ref = _inputs(cfg, 0)
        _, src, msk, ref = _inputs(cfg, 10 + s)
        outs.append(predict(params, cfg, z, np.array([0.3, 0.7]), ids, src, msk, ref).data)
    assert np.abs(outs[0]).max() > 0
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])


@pytest.mark.parametrize("cond, inj, expect", [
    ("SeqCat", "AddToSrc", {"src": 8, "tgt": 8, "msk": 0, "ref": 4}),
    ("SeqCat", "SeqCatMask", {"src": 8, "tgt": 8, "msk": 8, "ref": 4}),
    ("EmbedAdd", "AddToSrc", {"src": 0, "tgt": 8, "msk": 0, "ref": 4}),
])
def test_token_counts(tiny_cfg, cond, inj, expect):
    cfg = tiny_cfg.replace(conditioning=cond, mask_injection=inj)
    params = init_params(cfg)
    z, src, msk, ref = _inputs(cfg, 0)
    seq = assemble_tokens(z, src, msk, ref, params, cfg)
    # latent 2x4x4 with patch (1,2,2) -> 8 tokens per stream, the one-frame reference -> 4
    assert seq.counts == expect
    assert len(seq) == sum(expect.values())
    assert seq.tags[seq.tgt_span[0]] == "tgt"
    assert len(assemble_tokens(z, src, msk, None, params, cfg)) == len(seq) - 4


def test_lora_count_formula(tiny_cfg):
    cfg = tiny_cfg
    params = lora_attach(init_params(cfg), cfg.lora_rank, cfg.lora_alpha)
    lora = [k for k in params if ".lora_" in k]
    assert count(params, lora) == cfg.depth * 4 * 2 * cfg.lora_rank * cfg.width == lora_param_count(cfg)
    trainable = trainable_names(params, cfg)
    assert count(params, trainable) == lora_param_count(cfg) + conditioning_param_count(cfg)
    with pytest.raises(ValueError):
        lora_attach(params, 2, 4.0)
    assert set(trainable_names(params, cfg.replace(tuning="Full"))) == set(params)


def test_lora_b_zero_is_bitwise_neutral(tiny_cfg):
    cfg = tiny_cfg
    base = trained_like(cfg)
    with_lora = lora_attach(base, cfg.lora_rank, cfg.lora_alpha, seed=3)
    z, src, msk, ref = _inputs(cfg, 0)
    ids = [tokenize("remove the circle")] * 2
    t = np.array([0.5, 0.5])
    a = predict(base, cfg, z, t, ids, src, msk, ref).data
    b = predict(with_lora, cfg, z, t, ids, src, msk, ref).data
    assert np.array_equal(a, b)


def test_lora_merge_matches_unmerged(tiny_cfg):
    cfg = tiny_cfg
    params = lora_attach(trained_like(cfg), cfg.lora_rank, cfg.lora_alpha, seed=3)
    gen = np.random.default_rng(9)
    for k in params:
        if k.endswith(".lora_B"):
            params[k] = (0.05 * gen.standard_normal(params[k].shape)).astype(np.float32)
    merged = lora_merge(params, cfg)
    assert not any(".lora_" in k for k in merged)
    z, src, msk, ref = _inputs(cfg, 0)
    ids = [tokenize("remove the circle")] * 2
    t = np.array([0.2, 0.9])
    a = predict(params, cfg, z, t, ids, src, msk, ref).data
    b = predict(merged, cfg, z, t, ids, src, msk, ref).data
    assert np.abs(a - b).max() <= 1e-5
    with pytest.raises(ValueError):
        lora_merge(merged, cfg)


def test_target_only_prior_stream(tiny_cfg):
    cfg = tiny_cfg
    params = trained_like(cfg)
    z, *_ = _inputs(cfg, 0)
    out = predict(params, cfg, z, np.array([0.5, 0.5]), [[0], [0]], None)
    assert out.shape == z.shape


def test_config_validation_and_io(tmp_path, tiny_cfg):
    with pytest.raises(ValueError):
        ModelConfig(conditioning="EmbedAdd", mask_injection="SeqCatMask")
    with pytest.raises(ValueError):
        ModelConfig(width=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"bogus": 1})
    params = init_params(tiny_cfg, 4)
    path = tmp_path / "m.rtns"
    save_model(params, tiny_cfg, path, {"note": "x"})
    back, cfg, meta = load_model(path)
    assert cfg == tiny_cfg and meta["note"] == "x"
    assert all(np.array_equal(back[k], params[k]) for k in params)


def test_tokenize():
    assert tokenize("") == [0]
    ids = tokenize("Make the Square zorp")
    assert ids[-1] == 1 and ids[0] > 1


def test_predict_rejects_bad_timestep(tiny_cfg):
    params = init_params(tiny_cfg)
    z, src, *_ = _inputs(tiny_cfg, 0)
    with pytest.raises(ValueError):
        predict(params, tiny_cfg, z, np.array([1.5, 0.1]), [[0], [0]], src)
