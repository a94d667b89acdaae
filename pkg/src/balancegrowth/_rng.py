"""Deterministic substream derivation.

Every stochastic routine in the library draws from generators keyed by
(seed, *path), where the path is a tuple of small integers (replicate
index, chunk index, rank, ...). Substreams derived this way are
independent of execution order, so serial and any parallel schedule
produce bit-identical results.
"""

import numpy as np


def child_sequence(base: int | np.random.SeedSequence, *path: int) -> np.random.SeedSequence:
    """Seed sequence for the substream at `path` under `base`."""
    if isinstance(base, np.random.SeedSequence):
        entropy = base.entropy
        prefix = tuple(base.spawn_key)
    else:
        entropy = int(base)
        prefix = ()
    return np.random.SeedSequence(entropy=entropy, spawn_key=prefix + tuple(int(k) for k in path))


def substream(base: int | np.random.SeedSequence, *path: int) -> np.random.Generator:
    """Generator for the substream at `path` under `base`."""
    return np.random.default_rng(child_sequence(base, *path))
