"""Deterministic, splittable random streams.

All randomness in the package flows through counter-based Philox generators.
Child streams are derived from a master seed and a stream index, so chains,
replications, and benchmark cells can run in any order (or concurrently) and
still reproduce bit-exactly.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(master_seed: int, index: int = 0) -> np.random.Generator:
    """Generator for stream ``index`` derived from ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & _MASK64, spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(master_seed: int, index: int) -> int:
    """64-bit integer seed for child ``index``, stable across runs."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & _MASK64, spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])
