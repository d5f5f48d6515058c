"""Named, derived random streams.

Every stochastic step takes an explicit ``numpy.random.Generator``. Streams are
derived from one root seed plus a tuple of keys (ints or names), so a batch's
draws depend only on ``(seed, epoch, batch, purpose)`` and never on what ran
before it.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k) & _MASK64


def derive(seed: int, *keys) -> np.random.Generator:
    """Return an independent generator for ``seed`` and a path of keys."""
    entropy = [_key(seed)] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
