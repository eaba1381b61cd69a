"""Named RNG streams split from a single seed.

``stream(seed, "phase1", "disc")`` returns a PCG64 generator seeded by
``SeedSequence(entropy=seed, spawn_key=(crc32("phase1"), crc32("disc")))``.
Streams with different name paths are statistically independent, and the
mapping depends only on the names, never on call order.
"""
from __future__ import annotations

import zlib

import numpy as np


def split_key(*names) -> tuple[int, ...]:
    return tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)


def stream(seed: int, *names) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=split_key(*names))
    return np.random.Generator(np.random.PCG64(ss))
