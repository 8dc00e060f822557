"""Seeded, splittable random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``; nothing
here touches global state.
"""

from __future__ import annotations

import numpy as np



def as_generator(seed) -> np.random.Generator:
    """Return a Generator for an int seed, SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``n`` statistically independent child streams off ``rng``.

    The children depend only on the parent's seed lineage and the order of
    spawning, so two parents built from the same seed yield identical children.
    """
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]


def stream(seed: int, *key: int) -> np.random.Generator:
    """A stream keyed by ``(seed, *key)``; equal keys give equal streams."""
    return np.random.default_rng([int(seed), *map(int, key)])


def derive_seed(seed: int, *key: int) -> int:
    """A 32-bit integer seed derived from ``(seed, *key)``, for configs that store plain ints."""
    return int(np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1)[0])
