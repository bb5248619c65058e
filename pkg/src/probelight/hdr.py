"""Exposure bracketing: luminance, HDR merging, and percentile tone mapping.

LDR images are display-referred in [0, 1]; raising to gamma (2.4) linearizes
them. Merging runs in luminance space: starting from the lowest-EV frame,
each brighter frame keeps its own luminance except where it is overexposed
(display luminance above the 0.9 threshold, ramping to 1.0), where the
exposure-corrected luminance accumulated from darker frames takes over.
Chroma always comes from the EV0 frame, which suppresses ghosting from
frame-to-frame detail drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, require_chw

GAMMA = 2.4
LUMA_WEIGHTS = (0.21267, 0.71516, 0.07217)  # sRGB-linear luminance, sums to 1
OVEREXPOSURE_THRESHOLD = 0.9


@dataclass(frozen=True)
class ExposureBracket:
    images: tuple[Tensor, ...]
    evs: tuple[float, ...]

    def __post_init__(self):
        if len(self.images) != len(self.evs) or not self.images:
            raise ValueError("bracket needs equally many images and EVs, at least one")
        if self.evs[0] != 0.0:
            raise ValueError("bracket must start at EV 0")
        if any(b >= a for a, b in zip(self.evs, self.evs[1:])):
            raise ValueError("EVs must be strictly decreasing")
        shape = self.images[0].shape
        for img in self.images:
            require_chw(img, 3)
            if img.shape != shape:
                raise ValueError("bracket images must share one shape")


def luminance(img: Tensor, ev: float, gamma: float = GAMMA) -> Tensor:
    """(1, H, W) scene luminance of a display-referred LDR frame at `ev`:
    linearize with I^gamma, weight channels, undo the exposure with 2^-ev."""
    img = require_chw(img, 3)
    if img.min() < 0.0:
        raise ValueError("luminance requires non-negative input")
    lin = np.power(img.astype(np.float64), gamma)
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    lum = np.tensordot(w, lin, axes=(0, 0)) * (2.0 ** -ev)
    return lum[None, :, :].astype(np.float32)


def _lum64(img: Tensor, ev: float, gamma: float) -> np.ndarray:
    lin = np.power(img.astype(np.float64), gamma)
    return np.tensordot(np.asarray(LUMA_WEIGHTS, dtype=np.float64), lin, axes=(0, 0)) * (2.0 ** -ev)


def merge_ldrs(bracket: ExposureBracket, gamma: float = GAMMA) -> Tensor:
    """Merge an LDR bracket into a linear HDR image (3, H, W).

    Walks EVs from darkest to brightest; at each level the blend weight is
    clip((display luminance - 0.9) / 0.1, 0, 1) gated by a strict "darker
    frames saw more light" test, so well-exposed pixels keep the current
    level's luminance. Output channels are I_0^gamma rescaled by the merged
    over EV0 luminance ratio (zero where the EV0 luminance is zero).
    """
    n = len(bracket.images)
    lum = [_lum64(img, ev, gamma) for img, ev in zip(bracket.images, bracket.evs)]
    merged = lum[n - 1]
    for i in range(n - 2, -1, -1):
        display = (2.0 ** bracket.evs[i]) * lum[i]
        weight = np.clip((display - OVEREXPOSURE_THRESHOLD) / 0.1, 0.0, 1.0)
        weight = weight * (merged > lum[i])
        merged = (1.0 - weight) * lum[i] + weight * merged
    base = np.power(bracket.images[0].astype(np.float64), gamma)
    lum0 = lum[0] if n > 1 else merged
    ratio = np.divide(merged, lum0, out=np.zeros_like(merged), where=lum0 > 0)
    return (base * ratio[None, :, :]).astype(np.float32)


def tonemap(hdr: Tensor, ev: float = 0.0, gamma: float = GAMMA,
            percentile: float = 99.0, target: float = OVEREXPOSURE_THRESHOLD) -> Tensor:
    """Percentile tone map: scale so the given percentile hits `target`
    after the 1/gamma curve at EV 0, then clip to [0, 1]."""
    hdr = np.asarray(hdr, dtype=np.float32)
    if hdr.min() < 0.0:
        raise ValueError("tonemap requires non-negative radiance")
    anchor = float(np.percentile(hdr.astype(np.float64), percentile))
    if anchor <= 0.0:
        raise ValueError("tonemap anchor percentile is zero (black image)")
    s = (target ** gamma) / anchor
    out = np.power((2.0 ** ev) * s * hdr.astype(np.float64), 1.0 / gamma)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def scale_exposure(hdr: Tensor, ev: float) -> Tensor:
    """Linear radiance scaled by 2^ev."""
    hdr = np.asarray(hdr, dtype=np.float32)
    if hdr.min() < 0.0:
        raise ValueError("scale_exposure requires non-negative radiance")
    return hdr * np.float32(2.0 ** ev)
