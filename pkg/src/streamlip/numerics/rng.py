"""Seeded random streams.

All randomness comes from numpy's PCG64 bit generator, whose output for a
given seed is fixed across platforms. Named sub-streams (``"datagen"``,
``"init"``, ``"shuffle"``, ...) are derived from one root seed through a
``SeedSequence`` whose spawn key is the CRC-32 of the name, so adding a new
stream never perturbs the existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, stream: str | None = None, *extra: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key: tuple[int, ...] = ()
    if stream is not None:
        key = (zlib.crc32(stream.encode("utf-8")),) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
