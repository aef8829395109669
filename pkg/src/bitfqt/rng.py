"""Counter-based random streams.

Every stochastic operation takes an explicit ``numpy.random.Generator``.
Streams are backed by Philox (a counter-based generator), so a seed plus a
stream key fully determines the sequence and distinct keys never overlap.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and an optional stream key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``rng`` into ``n`` independent child streams."""
    return list(rng.spawn(n))
