"""Shared primitives: the SplitMix64 generator, PSNR, and the error types.

Dense tensors are plain ``numpy.float64`` arrays in C (row-major) order
everywhere in the package; every file format relies on that layout.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_GAMMA = np.uint64(GOLDEN_GAMMA)
_MIX1 = np.uint64(MIX1)
_MIX2 = np.uint64(MIX2)


class FormatError(ValueError):
    """A file or record is malformed (bad magic, truncated, wrong geometry)."""


class ChecksumError(FormatError):
    """CRC32 trailer does not match the payload."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""


def _mix_scalar(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream.

    The array methods are exact vectorised equivalents of repeated scalar
    calls: ``rng.u64_array(n)`` yields the same values as ``n`` calls to
    ``rng.next_u64()`` and leaves the generator in the same state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.state = self.seed

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix_scalar(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        n = int(n)
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * _GAMMA
            out = _mix_array(z)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform(self, n: int | None = None):
        """Uniform draws on [0, 1) with 53 bits of resolution."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussian(self, n: int | None = None):
        """Standard normal via Box-Muller (cosine branch), two draws per variate."""
        if n is None:
            return float(self.gaussian(1)[0])
        u = self.uniform(2 * int(n))
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def signs(self, n: int) -> np.ndarray:
        """Fair +1/-1 draws from the top bit of each output."""
        bits = (self.u64_array(n) >> np.uint64(63)).astype(np.float64)
        return 1.0 - 2.0 * bits

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64_array(n), kind="stable")

    def spawn(self) -> "Rng":
        """Child generator seeded from the next output of this one."""
        return Rng(self.next_u64())


def rng_next_u64(rng: Rng) -> int:
    return rng.next_u64()


def rng_gaussian(rng: Rng) -> float:
    return rng.gaussian()


def psnr(a, b, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the inputs are equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
