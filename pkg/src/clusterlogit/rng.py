"""Keyed random streams.

Every stochastic step draws from a Philox generator keyed by the user seed
plus a tuple of integers/strings (replication number, purpose, block...), so
results never depend on how work is split across workers.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream keys must be non-negative")
    return part


def substream(seed, *keys):
    """Return an independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
