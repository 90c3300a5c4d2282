"""Seeded random streams.

All sampling goes through :class:`numpy.random.Philox`, a counter-based
generator, keyed by a :class:`numpy.random.SeedSequence`. A stream is named by
the master seed plus a tuple of non-negative integers (its spawn key), so any
frame block, alpha set point, or camera noise draw can be regenerated without
replaying the others. Results therefore do not depend on how work is split
across threads.
"""

from __future__ import annotations

import zlib

import numpy as np

# Spawn-key domains. Keep stable: changing them changes every seeded output.
BATCH = 1
CAMERA = 2
CALIBRATION = 3
SWEEP = 4
BASELINE = 5
INDEPENDENT = 6

BLOCK_SIZE = 8192


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream key parts must be non-negative")
    return part


def stream(seed: int, *key) -> np.random.Generator:
    """Return the generator for stream ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def blocks(n: int, block_size: int = BLOCK_SIZE):
    """Yield ``(index, start, stop)`` for fixed-size blocks covering ``range(n)``."""
    for i, start in enumerate(range(0, n, block_size)):
        yield i, start, min(start + block_size, n)
