"""Seeded random streams.

Every random draw comes from one 64-bit root seed.  A stream is addressed by a
tuple of small integers (a purpose tag, then counters such as an object or scene
index), mixed in through ``SeedSequence`` spawn keys and fed to the counter-based
Philox generator.  A stream's output depends only on (seed, key), never on how
many other streams were used before it or in which order.
"""
from __future__ import annotations

import numpy as np

# purpose tags
SAMPLE_ORDER = 1
PLACEMENT = 2
CAMERA = 3
CLOUD = 4
ORACLE = 5


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
