"""Deterministic seed derivation.

Every random draw in the simulator flows from one base seed through a named
derivation path, so any component can be re-run in isolation and whole
experiments replay bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *parts) -> int:
    """Derive a 64-bit child seed from a base seed and a label path.

    Labels are stringified and joined, so ``derive_seed(s, "round", 3, "a")``
    and ``derive_seed(s, "round", 3, "b")`` are independent streams.
    """
    text = str(int(base)) + "/" + "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(base: int, *parts) -> np.random.Generator:
    """PCG64 generator seeded at a derived path."""
    return np.random.default_rng(derive_seed(base, *parts))


def salt_for(base: int, *parts) -> bytes:
    """32-byte salt derived from a seed path (fresh per distinct path)."""
    text = "salt/" + str(int(base)) + "/" + "/".join(str(p) for p in parts)
    return hashlib.sha256(text.encode("utf-8")).digest()
