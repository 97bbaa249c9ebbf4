"""Seeded random streams.

All randomness flows from one integer seed; independent consumers get their
own stream by appending integer or string tags, so adding a consumer never
shifts another consumer's draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag(x) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode())
    if isinstance(x, float):
        return zlib.crc32(repr(x).encode())
    return int(x) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([_tag(seed), *map(_tag, tags)])))
