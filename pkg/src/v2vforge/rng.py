"""Splittable, counter-based random streams.

Every stochastic operation derives its generator from a root seed plus a path
of keys (item id, frame index, purpose tag), so results do not depend on the
order in which items are processed.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

SEED_ENV = "V2VFORGE_SEED"


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *keys) -> np.random.Generator:
    """Philox generator for ``(seed, *keys)``; identical keys give identical streams."""
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return fallback
    return int(raw)
