"""Deterministic derivation of per-key RNG streams.

Seeds are derived by hashing (run seed, string keys) with SHA-256, so a
stream attached to a sample id is identical no matter which order samples
are visited in, which process they land on, or what platform runs them.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(seed: int, *keys: str) -> int:
    """64-bit stream seed derived from a run seed and any number of keys."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode("ascii"))
    for key in keys:
        h.update(b"\x00")
        h.update(key.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def stable_rng(seed: int, *keys: str) -> np.random.Generator:
    return np.random.default_rng(stable_seed(seed, *keys))


def stable_uniform(seed: int, *keys: str) -> float:
    """One deterministic uniform draw in [0, 1) keyed by (seed, keys)."""
    return stable_seed(seed, *keys) / 2.0**64
