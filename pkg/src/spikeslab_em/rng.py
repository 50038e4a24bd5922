"""Named, seed-keyed random streams.

Every consumer of randomness asks for ``stream(seed, *keys)``; streams with
different keys are statistically independent and do not depend on the order
in which they are created.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)
