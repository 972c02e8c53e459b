import sys

import numpy as np
import pytest

from v2vforge.captions import (
    CaptionSegment,
    RewriterError,
    SliceParams,
    detect_scene_cuts,
    downsample,
    filter_segment,
    imperativize,
    onset_frame,
    slice_triple,
)
from v2vforge.media import VideoClip

P = SliceParams()  # N=81 at 15 fps: preamble 5.4 s, duration in (2.0, 10.8]

# (total frames, fps, t_i, t_j, cut frames, expected reason or None for accept)
# Expectations worked out by hand from the rule list, first failing rule wins.
TABLE = [
    (200, 15, 6.0, 9.0, [], None),  # plain accept
    (161, 15, 3.0, 9.0, [], "too-few-frames"),  # (a) one frame short; also fails (b) but (a) comes first
    (324, 30, 5.4, 9.0, [], None),  # (a) 324 @ 30 fps -> exactly 162 after downsampling
    (200, 15, 5.4, 9.0, [], None),  # (b) t_i = N / fps_down exactly
    (200, 15, 5.3, 9.0, [], "insufficient-preamble"),  # (b) just below
    (200, 15, 3.0, 9.0, [], "insufficient-preamble"),  # (b) needs 5.4 s
    (200, 15, 6.0, 8.0, [], "too-short"),  # (c) exactly 2 s does not exceed
    (200, 15, 6.0, 7.5, [], "too-short"),  # (c) 1.5 s
    (300, 15, 6.0, 16.8, [], None),  # (c) exactly the 10.8 s cap
    (300, 15, 6.0, 16.9, [], "too-long"),  # (c) over the cap
    (200, 15, 6.0, 9.0, [90], "scene-cut"),  # (d) cut on the onset frame, interval is closed
    (200, 15, 6.0, 9.0, [89, 136], None),  # (d) cuts just outside [t_i, t_j]
]


@pytest.mark.parametrize("case", range(len(TABLE)))
def test_filter_table(case):
    total, fps, ti, tj, cuts, reason = TABLE[case]
    seg = CaptionSegment("v", "he sits down", ti, tj, fps, total)
    d = filter_segment(seg, cuts, P)
    assert d.accepted == (reason is None)
    assert d.reason == reason


def test_filter_is_exhaustive_over_table():
    reasons = {row[-1] for row in TABLE}
    assert {"too-few-frames", "insufficient-preamble", "too-short", "too-long", "scene-cut", None} <= reasons


def test_cut_at_segment_end_rejects():
    seg = CaptionSegment("v", "x", 6.0, 9.0, 15, 200)
    assert filter_segment(seg, [135], P).reason == "scene-cut"


def test_insufficient_tail():
    seg = CaptionSegment("v", "x", 7.0, 10.0, 15, 170)
    assert filter_segment(seg, [], P).reason == "insufficient-tail"


def test_segment_and_params_validation():
    with pytest.raises(ValueError):
        CaptionSegment("v", "x", 5.0, 5.0, 15, 200)
    with pytest.raises(ValueError):
        CaptionSegment("v", "x", 1.0, 20.0, 15, 200)
    with pytest.raises(ValueError):
        SliceParams(frames=81, min_total_frames=100)
    assert SliceParams(frames=10, min_total_frames=20).max_duration_s == pytest.approx(20 / 15)


def _index_clip(n):
    # frame k carries the value k so slices can be read back as indices
    data = np.zeros((n, 1, 1, 1), np.uint8)
    data[:, 0, 0, 0] = np.arange(n) % 256
    return VideoClip(data)


def test_slice_boundary_and_offset():
    clip = _index_clip(200)
    seg = CaptionSegment("v", "x", 81 / 15, 9.0, 15, 200)
    src, tgt = slice_triple(clip, seg, P)
    assert src.data[:, 0, 0, 0].tolist() == list(range(0, 81))
    assert tgt.data[:, 0, 0, 0].tolist() == list(range(81, 162))
    seg = CaptionSegment("v", "x", 100 / 15, 9.0, 15, 200)
    src, tgt = slice_triple(clip, seg, P)
    assert src.data[0, 0, 0, 0] == 19 and src.data[-1, 0, 0, 0] == 99
    assert tgt.data[0, 0, 0, 0] == 100 and tgt.data[-1, 0, 0, 0] == 180
    with pytest.raises(IndexError):
        slice_triple(clip, CaptionSegment("v", "x", 3.0, 9.0, 15, 200), P)


def test_onset_rounds_half_up():
    assert onset_frame(0.1, 15) == 2  # 1.5 -> 2
    assert onset_frame(0.09, 15) == 1  # 1.35 -> 1


def test_downsample_picks_nearest_ticks():
    clip = _index_clip(60)
    out = downsample(clip, 30, 15)
    assert out.data[:, 0, 0, 0].tolist() == list(range(0, 60, 2))
    with pytest.raises(ValueError):
        downsample(clip, 15, 30)


def test_scene_cuts():
    const = VideoClip(np.full((6, 3, 4, 4), 0.5, np.float32))
    assert detect_scene_cuts(const) == []
    hard = np.zeros((8, 3, 4, 4), np.float32)
    hard[5:] = 1.0
    assert detect_scene_cuts(VideoClip(hard)) == [5]
    fade = np.broadcast_to((np.arange(20, dtype=np.float32) * 0.01)[:, None, None, None], (20, 3, 4, 4))
    assert detect_scene_cuts(VideoClip(fade), 0.3) == []
    with pytest.raises(ValueError):
        detect_scene_cuts(const, 0.0)


@pytest.mark.parametrize(
    "caption, expected",
    [
        ("he sits down", "make him sit down"),
        ("the dog runs away", "make the dog run away"),
        ("She is walking to the door.", "make her walk to the door"),
        ("they open the box", "make them open the box"),
        ("a purple cloud", ""),
    ],
)
def test_imperativize(caption, expected):
    assert imperativize(caption) == expected


def test_imperativize_errors_and_hook():
    with pytest.raises(ValueError):
        imperativize("")
    hook = f"{sys.executable} -c \"import sys; print('make it ' + sys.stdin.read().strip())\""
    assert imperativize("glow", rewriter_cmd=hook) == "make it glow"
    with pytest.raises(RewriterError):
        imperativize("x", rewriter_cmd=f"{sys.executable} -c \"import sys; sys.exit(3)\"")
