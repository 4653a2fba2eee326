"""Deterministic derivation of independent random substreams.

Every stochastic step in the package draws from a generator derived from an
integer key tuple, so results are reproducible bit for bit and independent of
any parallel execution schedule. Domain tags keep the key spaces of different
algorithm phases disjoint.
"""

import numpy as np

# Domain tags for substream key tuples.
TAG_INIT = 1
TAG_MARGINALIZATION = 2
TAG_SE = 3
TAG_FINAL_MARGINALIZATION = 4
TAG_FINAL_SE = 5
TAG_CHAIN = 6
TAG_DATAGEN = 7
TAG_GRID = 8
TAG_SCORING = 9


def derive_rng(*key: int) -> np.random.Generator:
    """Return a generator seeded by the integer key tuple."""
    return np.random.default_rng(np.random.SeedSequence(key))


def derive_seed(*key: int) -> int:
    """Collapse a key tuple to a single nonnegative 32-bit seed."""
    return int(np.random.SeedSequence(key).generate_state(1)[0])
