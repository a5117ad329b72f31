"""Reproducible random streams.

Every source of randomness in the package is a Philox counter-based
generator keyed by a (seed, purpose-tag) pair, so independent parts of a
run (coefficients, samples, mini-batch shuffling, ...) consume independent
streams and any run is bitwise reproducible from its integer seed.
"""

import hashlib

import numpy as np


def stream(seed: int, tag: str) -> np.random.Generator:
    """Return the Philox stream for (seed, tag).

    The tag is hashed (SHA-256, first 8 bytes) so stream identity depends
    only on the documented pair, not on Python's per-process hashing.
    """
    tag_code = int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "big")
    ss = np.random.SeedSequence([int(seed), tag_code])
    return np.random.Generator(np.random.Philox(ss))
