"""Seeded, platform-independent random streams."""

import hashlib

import numpy as np


def stable_hash(key) -> int:
    """64-bit non-negative integer from a string or int, stable across runs and platforms."""
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream ids must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seeded_rng(seed, stream_id=0) -> np.random.Generator:
    """Independent generator for ``(seed, stream_id)``.

    ``stream_id`` may be an int or any string (hashed with SHA-256). PCG64 over
    a SeedSequence gives identical sequences on every platform numpy supports.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stable_hash(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))
