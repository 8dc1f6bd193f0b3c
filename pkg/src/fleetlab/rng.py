"""Counter-based seed splitting.

Every subsystem derives its generator from the command seed plus a label
path, so adding a consumer never shifts another consumer's stream.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(seed: int, *labels) -> int:
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(_label_key(l) for l in labels))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and ``labels``."""
    return np.random.Generator(np.random.Philox(derive_seed(seed, *labels)))
