"""Named, reproducible random streams derived from a single master seed.

One experiment seed fans out into independent substreams ("init",
"rollout", "eval", ...) so that, e.g., evaluation draws never overlap
training draws and every artifact is bitwise reproducible from
(seed, stream name).
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for substream `name` of master `seed`.

    Streams with distinct names are statistically independent; the same
    (seed, name) pair always yields the same draws.
    """
    key = _fnv1a_64(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(key & 0xFFFFFFFF, key >> 32))
    return np.random.Generator(np.random.PCG64(ss))
