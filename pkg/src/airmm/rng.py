"""Counter-based random streams.

Every random draw in the package comes from a Philox-4x64 generator whose
128-bit key is derived from a tuple of non-negative integers (seed and
indices) through numpy's ``SeedSequence`` hash.  Both algorithms are
specified bit-for-bit by numpy, so a given tuple yields the same stream on
every platform, and independent tuples yield independent streams.
"""

from __future__ import annotations

import numpy as np

# stream tags keep unrelated consumers of the same indices apart
SCENE = 1
UE = 2
INIT = 3
SHUFFLE = 4
CORPUS = 5
EVAL = 6


def stream(*key: int) -> np.random.Generator:
    if any(int(k) < 0 for k in key):
        raise ValueError(f"stream keys must be non-negative, got {key}")
    words = np.random.SeedSequence([int(k) for k in key]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=words))
