"""Reproducible per-task seeds derived from a base seed."""

from __future__ import annotations

import numpy as np


def derive_seed(base_seed: int, *keys: int) -> int:
    """64-bit seed for task ``keys`` under ``base_seed``; independent streams per key."""
    state = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)]).generate_state(2, np.uint64)
    return int(state[0]) ^ (int(state[1]) >> 1)


def generator(base_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)]))
