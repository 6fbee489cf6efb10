"""Named, seedable random streams.

Each consumer (weight init, dropout, mixture sampling, data split, ...) draws
from its own ``numpy.random.Generator`` backed by PCG64. The stream for
``(seed, name)`` is seeded with ``SeedSequence([seed, crc32(name)])``, so it is
identical on every platform and independent of which other streams exist or
how much they have been used.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *map(int, extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


class Streams:
    """Lazily created generators keyed by consumer name."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = stream(self.seed, name)
        return self._streams[name]
