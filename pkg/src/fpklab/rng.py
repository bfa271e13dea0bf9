"""Reproducible random streams built on numpy's counter-based Philox generator.

Every stream is keyed by ``(seed, purpose, block)``. Particles are grouped into fixed
blocks of ``BLOCK`` indices, so the noise seen by particle ``i`` depends only on the seed,
``i`` and the step, never on the total particle count or on how work is split.
"""

from __future__ import annotations

import numpy as np

RNG_NAME = "numpy.random.Philox (Philox4x64-10, key=(seed, purpose, particle block))"
BLOCK = 4096

NOISE = 0
INIT = 1
SUBSAMPLE = 2
CHECK = 3


def philox(seed: int, purpose: int = 0, block: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seeds must be nonnegative")
    key = (int(seed) % 2**64) | ((int(purpose) % 2**32) << 64) | ((int(block) % 2**32) << 96)
    return np.random.Generator(np.random.Philox(key=key))


class NoiseStream:
    """Standard normal increments, one ``(n, dim)`` array per call to :meth:`next`."""

    def __init__(self, seed: int, n: int, dim: int):
        self.n, self.dim = n, dim
        nblocks = -(-n // BLOCK)
        self._gens = [philox(seed, NOISE, b) for b in range(nblocks)]

    def next(self) -> np.ndarray:
        draws = [g.standard_normal((BLOCK, self.dim)) for g in self._gens]
        return np.concatenate(draws)[: self.n]
