# Copyright 2024, Clumio, a Commvault Company.
#
"""Seed derivation helpers.

Every random stream in the engine is derived from the experiment seed and a fixed key path,
so results never depend on the order in which workers are scheduled.
"""

from __future__ import annotations

import hashlib
from typing import Final

import numpy as np

SEED_MASK: Final = (1 << 64) - 1


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode('utf-8'), digest_size=8).digest()
        return int.from_bytes(digest, 'little')
    return int(key) & SEED_MASK


def derive_seed(seed: int, *keys: int | str) -> int:
    """Derive a 64-bit child seed from a parent seed and a key path."""
    entropy = [_key_to_int(seed), *(_key_to_int(key) for key in keys)]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng_for(seed: int, *keys: int | str) -> np.random.Generator:
    """Return an independent generator for a seed and key path."""
    return np.random.default_rng(derive_seed(seed, *keys))
