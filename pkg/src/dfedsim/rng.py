"""Deterministic random streams addressed by integer key paths.

Every stochastic draw in this package comes from a counter-based Philox
stream keyed by ``(seed, *path)``.  The k-th value of a keyed stream is a
pure function of the key, so concurrent clients, re-ordered rounds, or
replayed experiments always see identical randomness.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for the key ``(seed, *path)``.

    ``seed`` and every path component must be non-negative integers.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(int(p) for p in path)
    if any(p < 0 for p in key):
        raise ValueError(f"stream path must be non-negative, got {key}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
