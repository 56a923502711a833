"""Pinned, platform-independent random number generation.

Every stochastic operation in this package draws from numpy's PCG64
generator, seeded through ``numpy.random.SeedSequence``. SeedSequence
hashing and PCG64 streams are stable across platforms and numpy
versions, so a seed plus a derivation path fully determines every
random draw. The platform-default global RNG is never used.

Sub-streams are derived from a root seed and a *path* of integers via
``SeedSequence(seed, spawn_key=path)``. Modules use fixed tags for the
first path element so independent stages never share a stream.
"""

from __future__ import annotations

import numpy as np

# Stream tags (first spawn_key element). Fixed forever; changing any of
# these silently changes every derived dataset and experiment.
TAG_SPLIT = 0
TAG_DATASET = 1
TAG_FAMILY = 2
TAG_NET_INIT = 3
TAG_NET_TRAIN = 4
TAG_MOE = 5


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and a derivation path."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))
