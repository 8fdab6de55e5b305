"""Deterministic child-seed derivation.

Every random stream in the package is keyed by (master seed, purpose tag,
indices) through a stable hash, so adding parallelism or reordering work
cannot shuffle streams between consumers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, tag: str, *indices: int) -> int:
    """64-bit child seed from a master seed, a purpose tag, and indices."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    h.update(b"|")
    h.update(tag.encode())
    for i in indices:
        h.update(b"|")
        h.update(str(int(i)).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(master: int, tag: str, *indices: int) -> np.random.Generator:
    """Fresh PCG64 generator for one (seed, tag, indices) stream."""
    return np.random.default_rng(derive_seed(master, tag, *indices))
