"""Seedable 64-bit PRNG (splitmix64) with inverse-CDF Laplace sampling.

Used wherever cross-language determinism matters more than statistical
sophistication: privacy-filter noise, seeded visit orders, jitter.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in the open interval (0, 1)."""
        return ((self.next_u64() >> 11) + 0.5) * (2.0 ** -53)

    def laplace(self, scale: float) -> float:
        """Zero-mean Laplace draw via the inverse CDF."""
        u = self.uniform() - 0.5
        return -scale * math.copysign(1.0, u) * math.log1p(-2.0 * abs(u))

    def randint(self, bound: int) -> int:
        """Integer in [0, bound); modulo bias is irrelevant at our sizes."""
        return self.next_u64() % bound

    def permutation(self, n: int) -> list:
        """Fisher-Yates shuffle of range(n)."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            order[i], order[j] = order[j], order[i]
        return order


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of ints/strings."""
    h = 0xCBF29CE484222325
    for part in parts:
        data = part.encode() if isinstance(part, str) else str(int(part)).encode()
        for byte in data:
            h = ((h ^ byte) * 0x100000001B3) & _MASK
        h = (h * 0x100000001B3) & _MASK
    return h
