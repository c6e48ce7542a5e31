"""Named-stream RNG splitting: every random draw derives from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for (seed, names...); stable across runs."""
    key = ":".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
