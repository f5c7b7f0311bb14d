"""Seeded xoshiro256++ streams with splitmix64 seeding.

Both algorithms are the published reference generators, so the streams are
reproducible bit-for-bit in any language.  A stream for ``seed`` is the
xoshiro256++ generator whose four state words are the first four splitmix64
outputs starting from ``seed``.
"""

import numpy as np

from ._backend import kernels

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    x = (x + GOLDEN_GAMMA) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix ``keys`` into ``seed`` to name an independent sub-stream."""
    s = int(seed) & MASK64
    for k in keys:
        _, mixed = splitmix64((s ^ (int(k) * GOLDEN_GAMMA)) & MASK64)
        s = mixed
    return s


class Xoshiro256pp:
    def __init__(self, seed: int):
        if not 0 <= int(seed) <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        x = int(seed)
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    def next_u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        kernels.xoshiro_fill_u64(self.state, out)
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` doubles in ``[low, high)`` built from the top 53 bits of each draw."""
        out = np.empty(n, dtype=np.float64)
        kernels.xoshiro_fill_uniform(self.state, out)
        if low != 0.0 or high != 1.0:
            out = low + (high - low) * out
        return out

    def bounded(self, n: int) -> int:
        """Unbiased integer in ``[0, n)``."""
        if n < 1:
            raise ValueError("bound must be >= 1")
        return int(kernels.xoshiro_bounded(self.state, n))

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``arange(n)``."""
        idx = np.arange(n, dtype=np.int64)
        kernels.xoshiro_shuffle(self.state, idx)
        return idx
