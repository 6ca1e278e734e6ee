"""Deterministic counter-based randomness shared by every stochastic operation.

All noise draws, shuffles, subsampling and token sampling derive from
SplitMix64 streams keyed by explicit 64-bit seeds.  Draw ``k`` of a stream is
a pure function of ``(seed, k)``, so results are reproducible across runs,
platforms and degrees of parallelism: parallel workers consume disjoint
derived streams instead of sharing a global generator.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1

# 2^-53, so 53-bit mantissas map onto [0, 1) exactly
_INV53 = 1.0 / (1 << 53)


def derive_seed(seed: int, *labels: object) -> int:
    """Derive an independent 64-bit seed from a parent seed and a label path.

    Stage and worker seeds are always derived, never reused, which keeps
    parallel and serial executions on identical random streams.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update((int(seed) & _MASK).to_bytes(8, "little"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def mix64(values: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = values.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def stream_uniforms_at(seeds: np.ndarray, counter: int) -> np.ndarray:
    """Draw number `counter` (1-based) of each seed's stream, as [0, 1) doubles.

    Equals what SplitMix64(seed).uniforms(...) would yield at that position,
    so chunked consumers stay on the same per-stream sequence.
    """
    step = np.uint64((counter * _GOLDEN) & _MASK)
    raw = mix64(seeds.astype(np.uint64) + step)
    return (raw >> np.uint64(11)).astype(np.float64) * _INV53


class SplitMix64:
    """Counter-based SplitMix64 stream of uint64 words and derived variates."""

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & _MASK)
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return mix64(self.seed + idx * np.uint64(_GOLDEN))

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV53

    def uniforms_open(self, n: int) -> np.ndarray:
        """n doubles uniform on (0, 1]; safe as Box-Muller log input."""
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller over explicit counter pairs."""
        u = self.uniforms_open(2 * n)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        return r * np.cos(2.0 * math.pi * u[1::2])

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform on [0, bound); bound >= 1."""
        if bound < 1:
            raise ValueError("bound must be >= 1")
        out = np.floor(self.uniforms(n) * bound).astype(np.int64)
        return np.minimum(out, bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n, dtype=np.int64)
        if n < 2:
            return idx
        draws = self.uniforms(n - 1)
        for j in range(n - 1):
            r = j + int(draws[j] * (n - j))
            r = min(r, n - 1)
            idx[j], idx[r] = idx[r], idx[j]
        return idx

    def sample_without_replacement(self, pool: np.ndarray, k: int) -> np.ndarray:
        """Uniform k-subset of pool via partial Fisher-Yates; k <= len(pool)."""
        n = len(pool)
        if k > n:
            raise ValueError(f"cannot sample {k} from pool of {n} without replacement")
        if k == 0:
            return pool[:0].copy()
        idx = pool.copy()
        draws = self.uniforms(k)
        for j in range(k):
            r = j + int(draws[j] * (n - j))
            r = min(r, n - 1)
            idx[j], idx[r] = idx[r], idx[j]
        return idx[:k]


def gaussian_noise(seed: int, n: int, sigma: float) -> np.ndarray:
    """n draws of N(0, sigma^2) from a fresh stream keyed by seed."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros(n)
    return SplitMix64(seed).gaussians(n) * sigma
