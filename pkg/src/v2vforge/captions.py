"""Dense-caption slicing: caption windows -> (source clip, target clip, instruction)."""

from __future__ import annotations

import json
import math
import re
import shlex
import subprocess
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .media import VideoClip

_FRAME_EPS = 1e-9


@dataclass(frozen=True)
class CaptionSegment:
    video_id: str
    caption: str
    t_start: float
    t_end: float
    fps: float
    total_frames: int

    def __post_init__(self):
        if not (0 <= self.t_start < self.t_end):
            raise ValueError(f"segment interval [{self.t_start}, {self.t_end}] is not ordered")
        if self.t_end > self.total_frames / self.fps + _FRAME_EPS:
            raise ValueError("segment ends after the video")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class SliceParams:
    frames: int = 81
    fps_down: float = 15.0
    min_total_frames: int = 162
    min_duration_s: float = 2.0
    max_duration_s: float | None = None
    cut_threshold: float = 0.3

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.min_total_frames < 2 * self.frames:
            raise ValueError("min_total_frames must be at least 2 * frames")
        if self.max_duration_s is None:
            object.__setattr__(self, "max_duration_s", 2.0 * self.frames / self.fps_down)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Decision(True)


def downsampled_count(total_frames: int, fps: float, fps_down: float) -> int:
    return int(math.floor(total_frames * fps_down / fps + _FRAME_EPS))


def onset_frame(t_start: float, fps_down: float) -> int:
    """Round-half-up of ``t_start * fps_down``."""
    return int(math.floor(t_start * fps_down + 0.5 + _FRAME_EPS))


def filter_segment(seg: CaptionSegment, cuts, p: SliceParams) -> Decision:
    """Apply the temporal filters in order; the first failing rule names the rejection.

    ``cuts`` are frame indices on the downsampled timeline.
    """
    total = downsampled_count(seg.total_frames, seg.fps, p.fps_down)
    if total < p.min_total_frames:
        return Decision(False, "too-few-frames")
    if seg.t_start * p.fps_down < p.frames - _FRAME_EPS:
        return Decision(False, "insufficient-preamble")
    if seg.duration <= p.min_duration_s:
        return Decision(False, "too-short")
    if seg.duration > p.max_duration_s + _FRAME_EPS:
        return Decision(False, "too-long")
    for c in cuts:
        t = c / p.fps_down
        if seg.t_start - _FRAME_EPS <= t <= seg.t_end + _FRAME_EPS:
            return Decision(False, "scene-cut")
    if onset_frame(seg.t_start, p.fps_down) + p.frames > total:
        return Decision(False, "insufficient-tail")
    return ACCEPT


def downsample(clip: VideoClip, fps: float, fps_down: float) -> VideoClip:
    """Pick frames nearest to each tick of the ``fps_down`` clock."""
    if fps_down > fps + _FRAME_EPS:
        raise ValueError("cannot upsample a clip")
    count = downsampled_count(clip.frames, fps, fps_down)
    idx = np.minimum(np.floor(np.arange(count) * fps / fps_down + _FRAME_EPS).astype(int), clip.frames - 1)
    return VideoClip(clip.data[idx], clip.encoding)


def detect_scene_cuts(clip: VideoClip, threshold: float = 0.3) -> list[int]:
    if not (0 < threshold <= 1):
        raise ValueError("threshold must lie in (0, 1]")
    frames = clip.unit()
    if clip.frames < 2:
        return []
    diffs = np.abs(np.diff(frames, axis=0)).mean(axis=(1, 2, 3))
    return [int(k) + 1 for k in np.nonzero(diffs > threshold)[0]]


def slice_triple(clip: VideoClip, seg: CaptionSegment, p: SliceParams) -> tuple[VideoClip, VideoClip]:
    """Cut the ``frames`` frames before and from the onset out of a downsampled clip."""
    k = onset_frame(seg.t_start, p.fps_down)
    n = p.frames
    if k - n < 0 or k + n > clip.frames:
        raise IndexError(f"slice [{k - n}, {k + n}) outside clip of {clip.frames} frames")
    return VideoClip(clip.data[k - n : k], clip.encoding), VideoClip(clip.data[k : k + n], clip.encoding)


# ---------------------------------------------------------------------------
# caption -> imperative instruction

_PRONOUNS = {"he": "him", "she": "her", "they": "them", "it": "it", "i": "me", "we": "us", "you": "you"}
_PLURAL_PRONOUNS = {"they", "i", "we", "you"}
_AUX = {"is", "are", "was", "were", "keeps", "starts", "begins"}
_WORD = re.compile(r"[A-Za-z']+|[^\sA-Za-z']")


@lru_cache(maxsize=1)
def _lexicon() -> dict[str, dict[str, str]]:
    return json.loads(resources.files("v2vforge").joinpath("data/verbs.json").read_text(encoding="utf-8"))


def verb_lexicon() -> dict[str, str]:
    """Third-person singular form -> base verb."""
    return {forms["third"]: base for base, forms in _lexicon().items()}


def gerund_lexicon() -> dict[str, str]:
    return {forms["gerund"]: base for base, forms in _lexicon().items()}


class RewriterError(RuntimeError):
    pass


def _external_rewrite(caption: str, command: str) -> str:
    proc = subprocess.run(shlex.split(command), input=caption, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RewriterError(f"rewriter exited with status {proc.returncode}: {proc.stderr.strip()}")
    return proc.stdout.strip()


def imperativize(caption: str, rewriter_cmd: str | None = None) -> str:
    """Rewrite a third-person action caption as a "make ..." instruction.

    Returns ``""`` when no rule applies; callers drop such segments.
    """
    if caption is None or not caption.strip():
        raise ValueError("caption must be nonempty")
    if rewriter_cmd:
        return _external_rewrite(caption, rewriter_cmd)
    tokens = _WORD.findall(caption.strip().rstrip("."))
    if len(tokens) < 2:
        return ""
    verbs, gerunds = verb_lexicon(), gerund_lexicon()
    lowered = [t.lower() for t in tokens]
    first = lowered[0]
    if first in _PLURAL_PRONOUNS:
        verbs = {**verbs, **{base: base for base in _lexicon()}}
    if first in _PRONOUNS:
        subject = [_PRONOUNS[first]]
        start = 1
    else:
        subject = None
        start = 1
    for j in range(start, len(tokens)):
        word = lowered[j]
        if word in _AUX and j + 1 < len(tokens) and lowered[j + 1] in gerunds:
            base, rest = gerunds[lowered[j + 1]], tokens[j + 2 :]
        elif word in verbs:
            base, rest = verbs[word], tokens[j + 1 :]
        else:
            if subject is not None:
                return ""
            continue
        if subject is None:
            subject = [lowered[0]] + tokens[1:j]
        out = " ".join(["make", *subject, base, *rest])
        return re.sub(r"\s+([,.;!?])", r"\1", out)
    return ""
