"""Deterministic RNG streams keyed by integer tuples.

Every randomized routine in the package draws from a stream derived from
(seed, *key) through numpy's SeedSequence, so results are reproducible for
any execution order or worker count.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DataError


def seed_tuple(seed) -> tuple[int, ...]:
    """Normalize an int or tuple-of-ints seed to a flat non-negative tuple."""
    if isinstance(seed, (int, np.integer)):
        seed = (int(seed),)
    out = []
    for part in seed:
        part = int(part)
        if part < 0:
            raise DataError("seed components must be non-negative")
        out.append(part)
    return tuple(out)


def rng_from(seed, *key: int) -> np.random.Generator:
    """Generator for the substream (seed, *key)."""
    return np.random.default_rng(np.random.SeedSequence(seed_tuple(seed), spawn_key=key))
