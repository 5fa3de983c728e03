"""Seeded, portable pseudo-random sampling.

Reference pools and dataset splits must be reproducible across runs and
across implementations in other languages, so sampling is built on
splitmix64 (Steele, Lea & Flood's 64-bit mixing generator) instead of
any library RNG. The full recipe, all arithmetic mod 2**64:

    state += 0x9E3779B97F4A7C15
    z = state
    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    output = z ^ (z >> 31)

Bounded draws use rejection sampling (no modulo bias) and selection
without replacement is a partial Fisher-Yates shuffle, so any faithful
reimplementation of these three rules reproduces the same samples
bit for bit.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 stream seeded with a 64-bit integer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        """Next raw 64-bit output."""
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), exact via rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        if n == 1:
            return 0
        # Largest multiple of n that fits in 64 bits; values at or above
        # it would bias the modulo and are redrawn.
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """Draw k distinct indices from range(n), in draw order.

        Partial Fisher-Yates: swap a uniformly chosen remaining index
        into each of the first k slots. ``k == n`` yields a full
        shuffle.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        idx = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
