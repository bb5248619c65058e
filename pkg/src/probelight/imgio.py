"""Image file I/O: 8/16-bit PNG, PFM, and Radiance HDR (RGBE).

LDR images are stored as display-referred values in [0, 1]; no gamma is
applied on read or write. HDR formats carry linear radiance >= 0. PFM is the
bit-exact interchange format (header "PF"/"Pf", little-endian scale -1.0,
bottom-up rows); Radiance HDR is supported for interoperability and is lossy
(8-bit shared-exponent mantissas, about 0.4% relative error).

Read always returns a 3-channel (3, H, W) float32 tensor; grayscale files
are expanded, alpha is dropped. Depth maps go through read_depth instead.
"""

from __future__ import annotations

import os
import re

import cv2
import numpy as np

from .errors import ImageFormatError
from .tensor import Tensor, require_chw, require_finite

KINDS = ("ldr-png", "pfm", "radiance-hdr")

_EXT_TO_KIND = {".png": "ldr-png", ".pfm": "pfm", ".hdr": "radiance-hdr"}


def kind_for_path(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    try:
        return _EXT_TO_KIND[ext]
    except KeyError:
        raise ImageFormatError(f"cannot infer image kind from extension: {path!r}")


def _to_3ch(hwc: np.ndarray) -> np.ndarray:
    if hwc.ndim == 2:
        hwc = hwc[:, :, None]
    if hwc.shape[2] == 1:
        hwc = np.repeat(hwc, 3, axis=2)
    elif hwc.shape[2] == 4:
        hwc = hwc[:, :, :3]
    elif hwc.shape[2] != 3:
        raise ImageFormatError(f"unsupported channel count {hwc.shape[2]}")
    return hwc


def read_image(path: str, kind: str | None = None) -> Tensor:
    """Read an image file as a (3, H, W) float32 tensor."""
    kind = kind or kind_for_path(path)
    if kind == "ldr-png":
        hwc = _read_png(path)
    elif kind == "pfm":
        hwc = _read_pfm(path)
    elif kind == "radiance-hdr":
        hwc = _read_radiance_hdr(path)
    else:
        raise ImageFormatError(f"unknown image kind {kind!r}")
    chw = np.ascontiguousarray(_to_3ch(hwc).transpose(2, 0, 1))
    return require_chw(require_finite(chw, path))


def read_depth(path: str, kind: str | None = None) -> Tensor:
    """Read a single-channel depth/disparity map as (1, H, W)."""
    kind = kind or kind_for_path(path)
    if kind == "pfm":
        hwc = _read_pfm(path)
    elif kind == "ldr-png":
        hwc = _read_png(path)
    else:
        raise ImageFormatError(f"depth maps must be PFM or PNG, got {kind!r}")
    if hwc.ndim == 3:
        hwc = hwc[:, :, 0]
    return require_chw(require_finite(hwc[None, :, :].astype(np.float32), path), 1)


def write_image(img: Tensor, path: str, kind: str | None = None, bit_depth: int = 8) -> None:
    """Write a (C, H, W) tensor; LDR values must already lie in [0, 1]."""
    kind = kind or kind_for_path(path)
    img = require_finite(np.asarray(img, dtype=np.float32), "image")
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) tensor, got shape {img.shape}")
    if kind == "ldr-png":
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("LDR write requires values in [0, 1]; refusing to clamp")
        _write_png(img, path, bit_depth)
    elif kind == "pfm":
        _write_pfm(img, path)
    elif kind == "radiance-hdr":
        if img.min() < 0.0:
            raise ValueError("HDR write requires non-negative radiance")
        _write_radiance_hdr(img, path)
    else:
        raise ImageFormatError(f"unknown image kind {kind!r}")


# ---------------------------------------------------------------------------
# PNG (via OpenCV; stored bottom line of the API is BGR uint8/uint16)

def _read_png(path: str) -> np.ndarray:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"cannot read PNG: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"unsupported PNG bit depth: {raw.dtype}")
    hwc = raw.astype(np.float32) / np.float32(scale)
    if hwc.ndim == 3 and hwc.shape[2] >= 3:
        hwc[:, :, :3] = hwc[:, :, 2::-1]  # BGR(A) -> RGB(A)
    return hwc


def _write_png(img: Tensor, path: str, bit_depth: int) -> None:
    if bit_depth == 8:
        q = np.round(img * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        q = np.round(img * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"PNG bit depth must be 8 or 16, got {bit_depth}")
    hwc = q.transpose(1, 2, 0)
    if hwc.shape[2] == 3:
        hwc = hwc[:, :, ::-1]  # RGB -> BGR
    else:
        hwc = hwc[:, :, 0]
    if not cv2.imwrite(path, hwc):
        raise ImageFormatError(f"cannot write PNG: {path}")


# ---------------------------------------------------------------------------
# PFM

def _pfm_read_token(f) -> bytes:
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise ImageFormatError("unexpected end of PFM header")
        if c in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += c


def _read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _pfm_read_token(f)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ImageFormatError(f"not a PFM file (magic {magic!r}): {path}")
        try:
            width = int(_pfm_read_token(f))
            height = int(_pfm_read_token(f))
            scale = float(_pfm_read_token(f))
        except ValueError as e:
            raise ImageFormatError(f"bad PFM header in {path}: {e}")
        if width <= 0 or height <= 0 or scale == 0.0:
            raise ImageFormatError(f"bad PFM dimensions/scale in {path}")
        count = width * height * channels
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ImageFormatError(f"truncated PFM payload in {path}")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    img = data.reshape(height, width, channels)
    img = img[::-1, :, :]  # rows are stored bottom-up
    if abs(scale) != 1.0:
        img = img * np.float32(abs(scale))
    return np.ascontiguousarray(img)


def _write_pfm(img: Tensor, path: str) -> None:
    c = img.shape[0]
    magic = b"PF" if c == 3 else b"Pf"
    hwc = np.ascontiguousarray(img.transpose(1, 2, 0)[::-1, :, :], dtype="<f4")
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{img.shape[2]} {img.shape[1]}\n".encode())
        f.write(b"-1.0\n")  # little-endian, unit scale
        f.write(hwc.tobytes())


# ---------------------------------------------------------------------------
# Radiance HDR (RGBE). Written flat; reads flat and new-style RLE scanlines.

_HDR_DIM_RE = re.compile(rb"^-Y (\d+) \+X (\d+)\s*$")


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """(N, 3) float32 -> (N, 4) uint8, round-to-nearest mantissas."""
    out = np.zeros((rgb.shape[0], 4), dtype=np.uint8)
    m = rgb.max(axis=1)
    live = m >= 1e-32
    if np.any(live):
        mant, expo = np.frexp(m[live].astype(np.float64))
        # value = mantissa * 2^expo with mantissa in [0.5, 1); encode channel
        # c as round(c * 2^(-expo) * 256) so the stored byte is < 256.
        v = np.ldexp(1.0, 8 - expo)
        enc = np.round(rgb[live].astype(np.float64) * v[:, None])
        enc = np.clip(enc, 0, 255)
        out[live, :3] = enc.astype(np.uint8)
        out[live, 3] = (expo + 128).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    rgb = rgbe[:, :3].astype(np.float32)
    e = rgbe[:, 3].astype(np.int32)
    scale = np.ldexp(np.float32(1.0), e - (128 + 8)).astype(np.float32)
    scale[e == 0] = 0.0
    return rgb * scale[:, None]


def _write_radiance_hdr(img: Tensor, path: str) -> None:
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if img.max() >= np.float64(2.0) ** 126:
        raise ValueError("radiance too large for RGBE encoding")
    _, h, w = img.shape
    flat = img.transpose(1, 2, 0).reshape(-1, 3)
    rgbe = _float_to_rgbe(flat)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode())
        f.write(rgbe.tobytes())


def _hdr_read_rle_scanline(f, width: int) -> np.ndarray:
    head = f.read(4)
    if len(head) != 4:
        raise ImageFormatError("truncated HDR scanline")
    if not (head[0] == 2 and head[1] == 2 and (head[2] << 8) + head[3] == width):
        # flat scanline: head is the first pixel
        rest = f.read(4 * (width - 1))
        if len(rest) != 4 * (width - 1):
            raise ImageFormatError("truncated HDR scanline")
        return np.frombuffer(head + rest, dtype=np.uint8).reshape(width, 4)
    row = np.zeros((width, 4), dtype=np.uint8)
    for c in range(4):
        i = 0
        while i < width:
            b = f.read(1)
            if not b:
                raise ImageFormatError("truncated HDR RLE stream")
            n = b[0]
            if n > 128:  # run
                count = n - 128
                v = f.read(1)
                if not v or i + count > width:
                    raise ImageFormatError("bad HDR RLE run")
                row[i:i + count, c] = v[0]
            else:  # literals
                count = n
                lit = f.read(count)
                if len(lit) != count or i + count > width:
                    raise ImageFormatError("bad HDR RLE literals")
                row[i:i + count, c] = np.frombuffer(lit, dtype=np.uint8)
            i += count
    return row


def _read_radiance_hdr(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline()
        if not magic.startswith(b"#?"):
            raise ImageFormatError(f"not a Radiance HDR file: {path}")
        fmt_ok = False
        while True:
            line = f.readline()
            if not line:
                raise ImageFormatError(f"unexpected end of HDR header: {path}")
            s = line.strip()
            if s.startswith(b"FORMAT="):
                fmt_ok = s == b"FORMAT=32-bit_rle_rgbe"
            elif s == b"":
                break
        if not fmt_ok:
            raise ImageFormatError(f"unsupported HDR format in {path}")
        m = _HDR_DIM_RE.match(f.readline())
        if not m:
            raise ImageFormatError(f"unsupported HDR orientation in {path}")
        h, w = int(m.group(1)), int(m.group(2))
        rows = np.empty((h, w, 3), dtype=np.float32)
        for y in range(h):
            rgbe = _hdr_read_rle_scanline(f, w)
            rows[y] = _rgbe_to_float(rgbe).reshape(w, 3)
    return rows
