"""Counter-based seed splitting.

Every consumer of randomness asks for its own generator keyed by
``(seed, *stream)``, so no two modules ever share generator state.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Independent generator for the named stream under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in stream))
    return np.random.default_rng(ss)
