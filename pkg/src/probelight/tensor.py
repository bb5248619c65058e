"""Tensor conventions and small arithmetic helpers.

Images, latents and depth maps are all float32 numpy arrays of shape
(channels, height, width), channel-major and row-major within a channel.
Public operations must leave no NaN/Inf behind; the validators here are the
boundary checks. Elementwise helpers are plain IEEE-754 single-precision
operations; reductions accumulate in float64.
"""

from __future__ import annotations

import hashlib

import numpy as np

Tensor = np.ndarray


def as_tensor(data, channels: int | None = None) -> Tensor:
    """Coerce to a validated float32 (C, H, W) tensor."""
    x = np.asarray(data, dtype=np.float32)
    return require_chw(x, channels)


def require_chw(x: Tensor, channels: int | None = None) -> Tensor:
    if x.ndim != 3:
        raise ValueError(f"expected (C, H, W) tensor, got shape {x.shape}")
    if channels is not None and x.shape[0] != channels:
        raise ValueError(f"expected {channels} channels, got {x.shape[0]}")
    if x.dtype != np.float32:
        x = x.astype(np.float32)
    require_finite(x)
    return x


def require_finite(x: Tensor, name: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def require_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b)
    return a + b


def scale(a: Tensor, s: float) -> Tensor:
    return a * np.float32(s)


def lerp(a: Tensor, b: Tensor, w: float) -> Tensor:
    # evaluated left to right: a + (b - a) * w
    require_same_shape(a, b)
    return a + (b - a) * np.float32(w)


def max_abs_diff(a: Tensor, b: Tensor) -> float:
    require_same_shape(a, b)
    d = np.abs(a.astype(np.float64) - b.astype(np.float64))
    return float(d.max()) if d.size else 0.0


def l2_distance(a: Tensor, b: Tensor) -> float:
    require_same_shape(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt(np.sum(d * d)))


def clamp01(x: Tensor) -> Tensor:
    return np.clip(x, 0.0, 1.0)


def checksum(x: Tensor) -> str:
    """sha256 of shape + raw little-endian float32 bytes (manifest identity)."""
    h = hashlib.sha256()
    h.update(repr(tuple(x.shape)).encode())
    h.update(np.ascontiguousarray(x, dtype="<f4").tobytes())
    return h.hexdigest()
