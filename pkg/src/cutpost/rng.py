"""Keyed random-stream derivation.

All stochastic operations in the package consume an explicit
``numpy.random.Generator``.  Independent work units (replicates, chain
launches, experiment cells) get their own stream derived from a master seed
plus an integer key path, so results never depend on scheduling order or
worker count.
"""

import numpy as np


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``(seed, *key)``.

    The same ``(seed, key)`` pair always yields the same stream, and streams
    with different key paths are statistically independent.
    """
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in key)])
    return np.random.Generator(np.random.PCG64(ss))
