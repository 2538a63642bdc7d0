"""Named random sub-streams derived from a single root seed."""
import zlib

import numpy as np


def stream(seed, name, *extra):
    """Return a Generator for the sub-stream ``name`` of ``seed``.

    Streams with different names (or extra integer keys) are independent,
    so changing how much randomness one stage consumes never shifts another.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
