"""Named, counter-based random substreams.

Every consumer of randomness asks for a generator by ``(seed, *keys)``.  Keys
may be strings or integers; strings are hashed with CRC32 so the mapping is
stable across platforms and Python versions.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError(f"substream keys must be non-negative, got {key}")
    return key


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return a Philox generator for the substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
