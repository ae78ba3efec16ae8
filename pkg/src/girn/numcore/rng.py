from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass
class RngStream:
    """Counter-based random stream.

    Each call to :meth:`generator` hands out a fresh PCG64 generator keyed on
    ``(seed, counter)`` and advances the counter, so a draw sequence depends
    only on those two integers.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.counter = int(self.counter) & _MASK64

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.counter])
        self.counter = (self.counter + 1) & _MASK64
        return np.random.Generator(np.random.PCG64(ss))

    def fork(self, offset: int) -> "RngStream":
        """Independent stream sharing the seed, starting at a distant counter."""
        return RngStream(self.seed, (int(offset) << 32) & _MASK64)
