"""Deterministic, counter-based random numbers.

Algorithm id: "splitmix64/box-muller/v1". The raw stream is splitmix64
evaluated at seed + i * golden, i = 1, 2, ...; normals come from Box-Muller
on 53-bit uniforms. Integer mixing is exact, so the same seed yields the
same byte stream on every platform; reseeding is done by hashing components
into a fresh seed rather than by jumping the stream, which keeps per-task
streams independent of scheduling order.
"""

from __future__ import annotations

import struct

import numpy as np

ALGORITHM_ID = "splitmix64/box-muller/v1"

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _MIX1
    x ^= x >> np.uint64(27)
    x *= _MIX2
    x ^= x >> np.uint64(31)
    return x


def _component_bits(part) -> int:
    if isinstance(part, bool):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, (float, np.floating)):
        return struct.unpack("<Q", struct.pack("<d", float(part)))[0]
    if isinstance(part, str):
        part = part.encode("utf-8")
    if isinstance(part, bytes):
        h = 0xCBF29CE484222325  # FNV-1a 64
        for b in part:
            h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        return h
    raise TypeError(f"cannot fold {type(part).__name__} into a seed")


def derive_seed(seed: int, *parts) -> int:
    """Hash-combine components into a new 64-bit seed (order sensitive)."""
    h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for i, part in enumerate(parts):
            c = np.uint64(_component_bits(part))
            h = _mix64(np.atleast_1d(h ^ (c + np.uint64(i + 1) * _GOLDEN)))[0]
    return int(h)


class SeededRng:
    """Stateful view of the counter-based stream for one task."""

    algorithm = ALGORITHM_ID

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._pos = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64)
        self._pos += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GOLDEN)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in (0, 1], from the top 53 bits of the raw stream."""
        bits = self._raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * (2.0 ** -53)

    def normals(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        r = np.sqrt(-2.0 * np.log(u[:pairs]))
        theta = (2.0 * np.pi) * u[pairs:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n]

    def gaussian(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        if n <= 0 or any(int(s) <= 0 for s in shape):
            raise ValueError(f"gaussian requires positive dimensions, got {shape}")
        return self.normals(n).astype(np.float32).reshape(shape)

    def derive(self, *parts) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, *parts))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, pos={self._pos})"


def gaussian_like(shape: tuple[int, ...], rng: SeededRng) -> np.ndarray:
    """i.i.d. standard-normal float32 tensor of the given (C, H, W) shape."""
    return rng.gaussian(tuple(shape))
