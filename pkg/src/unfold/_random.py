"""Keyed random substreams.

Every random draw in the package comes from a generator derived from a root
seed plus an integer key path, so results do not depend on the order in which
replicates are executed or on how they are split across workers.
"""

from __future__ import annotations

import numpy as np


def substream(seed, *key: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        if key:
            raise TypeError("keys need an integer root seed")
        return seed
    return np.random.default_rng(np.random.SeedSequence(_root(seed), spawn_key=tuple(int(k) for k in key)))


def child_seed(seed, *key: int) -> int:
    """A 63-bit integer seed for the substream at ``key``."""
    ss = np.random.SeedSequence(_root(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _root(seed) -> int:
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    seed = int(seed)
    if seed < 0:
        raise ValueError("seeds must be nonnegative")
    return seed
