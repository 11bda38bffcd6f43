"""Portable deterministic randomness shared by all clients.

Every client must derive bit-identical permutations and matrices from the
jointly agreed seed, so nothing here may depend on the platform or on the
Python version. The generator is SplitMix64; floats come from the top 53
bits of each word; normals use the cosine branch of Box-Muller; shuffles are
descending Fisher-Yates with a modulo swap index.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_TWO_POW_M53 = 1.0 / (1 << 53)


class RngStream:
    """SplitMix64 stream. ``next_u64`` is a pure function of ``state``."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def __repr__(self):
        return f"RngStream(state=0x{self.state:016x})"

    def __eq__(self, other):
        return isinstance(other, RngStream) and other.state == self.state

    def __hash__(self):
        return hash(self.state)

    def copy(self) -> "RngStream":
        return RngStream(self.state)

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform01(self) -> float:
        """Uniform float in [0, 1); never returns 1.0."""
        return (self.next_u64() >> 11) * _TWO_POW_M53

    def gaussian(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        u1 = self.uniform01()
        u2 = self.uniform01()
        # 1 - u1 lies in (0, 1], so the log is finite
        z = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def u64_block(self, count: int) -> np.ndarray:
        """``count`` consecutive ``next_u64`` outputs, computed with numpy."""
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        return z ^ (z >> np.uint64(31))

    def uniform_block(self, count: int) -> np.ndarray:
        return (self.u64_block(count) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def gaussians(self, count: int) -> list[float]:
        """Same values as ``count`` successive ``gaussian()`` calls."""
        u = self.uniform_block(2 * count).tolist()
        log, cos, sqrt, tau = math.log, math.cos, math.sqrt, 2.0 * math.pi
        return [sqrt(-2.0 * log(1.0 - u[2 * k])) * cos(tau * u[2 * k + 1]) for k in range(count)]

    def below(self, bound: int) -> int:
        """Integer in [0, bound) via ``next_u64() % bound``."""
        if bound < 1:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound

    def shuffle(self, items: list) -> None:
        """In-place descending Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def permutation(n: int, seed: int) -> list[int]:
    """Seeded permutation of ``range(n)``, identical on every platform."""
    if n < 1:
        raise ValueError(f"permutation size must be >= 1, got {n}")
    out = list(range(n))
    RngStream(seed).shuffle(out)
    return out


def derive_seed(seed: int, *labels) -> int:
    """Mix integer/str labels into ``seed``, giving an independent 64-bit seed.

    Used to hand out per-tree and per-party streams from one master seed.
    """
    stream = RngStream(seed)
    value = stream.next_u64()
    for label in labels:
        if isinstance(label, str):
            label = int.from_bytes(label.encode(), "little")
        while True:
            stream = RngStream(value ^ (label & MASK64))
            value = stream.next_u64()
            label >>= 64
            if not label:
                break
    return value
