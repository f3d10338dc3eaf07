"""Seeded RNG substreams.

Every random choice in the package flows from one integer seed through
named substreams, so a single seed reproduces datasets, weight inits,
batch sampling and augmentation independently of each other.
"""

import hashlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.blake2s(str(part).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream named by `path` under `seed`.

    Path elements may be strings ("data", "init") or ints (patch index).
    The same (seed, path) always yields the same stream; distinct paths
    are statistically independent.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
