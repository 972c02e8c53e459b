import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2vforge.media import MaskVideo, VideoClip
from v2vforge.transitions import (
    RegionSpec,
    TransitionSpec,
    blend_weights,
    combine_masks,
    compose_transition,
    make_border_mask,
    make_spatial_mask,
    make_temporal_mask,
)


def _const(n, v, h=4, w=5):
    return VideoClip(np.full((n, 3, h, w), v, np.float32), "f32")


def _rand(n, seed, h=4, w=5):
    return VideoClip(np.random.default_rng(seed).random((n, 3, h, w), dtype=np.float32), "f32")


def test_zero_window_edges():
    src, tgt = _rand(6, 0), _rand(6, 1)
    out, mask = compose_transition(src, tgt, TransitionSpec(0, 0))
    assert out == tgt and mask.data.all()
    out, mask = compose_transition(src, tgt, TransitionSpec(6, 0))
    assert out == src and not mask.data.any()


def test_ramp_values():
    out, mask = compose_transition(_const(16, 0.0), _const(16, 1.0), TransitionSpec(8, 4))
    vals = out.data[:, 0, 0, 0]
    assert vals[6:10].tolist() == [0.125, 0.375, 0.625, 0.875]
    assert (vals[:6] == 0).all() and (vals[10:] == 1).all()
    assert mask.data[:8].sum() == 0 and mask.data[8:].all()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.data())
def test_exact_outside_convex_inside_monotone_mask(n, data):
    onset = data.draw(st.integers(0, n))
    window = 2 * data.draw(st.integers(0, 5))
    seed = data.draw(st.integers(0, 10_000))
    src, tgt = _rand(n, seed), _rand(n, seed + 1)
    out, mask = compose_transition(src, tgt, TransitionSpec(onset, window))
    half = window // 2
    a, b, o = src.data, tgt.data, out.data
    for k in range(n):
        if k < onset - half:
            assert np.array_equal(o[k], a[k])
        elif k >= onset + half:
            assert np.array_equal(o[k], b[k])
        else:
            assert (o[k] >= np.minimum(a[k], b[k])).all() and (o[k] <= np.maximum(a[k], b[k])).all()
    frame_on = mask.data.reshape(n, -1).max(axis=1)
    assert (np.diff(frame_on.astype(int)) >= 0).all()
    assert frame_on.tolist() == [int(k >= onset) for k in range(n)]


def test_alpha_half_at_onset_midpoint():
    w = blend_weights(20, TransitionSpec(10, 8))
    # alpha crosses 0.5 between frames onset-1 and onset
    assert w[9] < 0.5 < w[10] and w[9] + w[10] == pytest.approx(1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        TransitionSpec(3, 3)
    with pytest.raises(ValueError):
        TransitionSpec(-1)
    with pytest.raises(ValueError):
        compose_transition(_rand(4, 0), _rand(5, 0), TransitionSpec(1))


def test_temporal_mask():
    assert make_temporal_mask(6, 0, (5, 4)).data.all()
    assert not make_temporal_mask(6, 6, (5, 4)).data.any()
    m = make_temporal_mask(6, 3, (5, 4)).data
    assert not m[:3].any() and m[3:].all()
    with pytest.raises(ValueError):
        make_temporal_mask(6, 7, (5, 4))


def test_spatial_masks():
    full = make_spatial_mask(2, (32, 32), RegionSpec.box(0, 0, 32, 32))
    assert full.data.all()
    assert not make_spatial_mask(2, (32, 32), RegionSpec()).data.any()
    box = make_spatial_mask(3, (32, 32), RegionSpec.box(5, 7, 10, 10))
    assert box.data.reshape(3, -1).sum(axis=1).tolist() == [100, 100, 100]
    per = make_spatial_mask(2, (8, 8), RegionSpec.per_frame([(0, 0, 2, 2), None]))
    assert per.data[0].sum() == 4 and per.data[1].sum() == 0
    with pytest.raises(ValueError):
        make_spatial_mask(1, (8, 8), RegionSpec.box(5, 5, 4, 4))


def test_border_mask():
    m = make_border_mask(1, (10, 8), 2).data[0, 0]
    assert m.sum() == 10 * 8 - 6 * 4
    assert m[2:-2, 2:-2].sum() == 0
    with pytest.raises(ValueError):
        make_border_mask(1, (10, 8), 5)


def test_combine_masks():
    x = make_spatial_mask(4, (6, 6), RegionSpec.box(1, 1, 3, 3))
    ones = MaskVideo(np.ones((4, 1, 6, 6), np.uint8))
    zeros = MaskVideo(np.zeros((4, 1, 6, 6), np.uint8))
    assert combine_masks(x, ones, "intersect") == x
    assert combine_masks(x, zeros, "union") == x
    t = make_temporal_mask(4, 2, (6, 6))
    assert combine_masks(t, ones) == t
    y = make_temporal_mask(4, 1, (6, 6))
    for mode in ("intersect", "union"):
        assert combine_masks(x, y, mode) == combine_masks(y, x, mode)
        assert combine_masks(x, x, mode) == x
    with pytest.raises(ValueError):
        combine_masks(x, y, "xor")
