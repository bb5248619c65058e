"""Probe geometry: mirror ball <-> equirectangular map, pano crops, renders.

Direction convention (shared by every module): right-handed camera frame
with +y up and the camera looking down -z, so u = 0.5 in the
equirectangular map is camera-forward and u wraps the azimuth
(phi = 2*pi*(u - 0.5), direction (sin(theta)sin(phi), cos(theta),
-sin(theta)cos(phi)) with theta = v*pi from the +y pole). Width must be
twice the height.

The chrome ball is viewed orthographically. For a disk point (x, y) the
surface normal is (x, y, sqrt(1 - x^2 - y^2)) and the mirrored view ray
reflects to R = (2x*nz, 2y*nz, 2*nz^2 - 1); the inverse map recovers the
normal of an environment direction R as normalize(R + (0, 0, 1)). The exact
camera-forward direction R = (0, 0, -1) has no preimage (the rim
singularity); texel grids never hit it exactly and near-rim samples clamp
into the disk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, require_chw, require_finite

ENV_DEFAULT_SIZE = (128, 256)


def require_envmap(env: Tensor) -> Tensor:
    env = require_chw(env, 3)
    _, h, w = env.shape
    if w != 2 * h:
        raise ValueError(f"environment map must be (3, H, 2H), got {env.shape}")
    if env.min() < 0.0:
        raise ValueError("environment radiance must be non-negative")
    return env


@dataclass(frozen=True)
class SphereMaterial:
    kind: str  # mirror | matte-silver | gray-diffuse
    albedo: float
    gloss_exponent: float = 50.0

    def __post_init__(self):
        if self.kind not in ("mirror", "matte-silver", "gray-diffuse"):
            raise ValueError(f"unknown material kind {self.kind!r}")
        if not 0.0 < self.albedo <= 1.0:
            raise ValueError("albedo must be in (0, 1]")
        if self.gloss_exponent <= 0.0:
            raise ValueError("gloss exponent must be positive")


SILVER_MIRROR = SphereMaterial("mirror", albedo=0.9)
SILVER_MATTE = SphereMaterial("matte-silver", albedo=0.8, gloss_exponent=50.0)
GRAY_DIFFUSE = SphereMaterial("gray-diffuse", albedo=0.5)


@dataclass(frozen=True)
class CropSpec:
    fov_v_deg: float
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    out_size: tuple[int, int] = (192, 256)  # (H, W)

    def __post_init__(self):
        if not 0.0 < self.fov_v_deg < 180.0:
            raise ValueError("vertical FOV must be in (0, 180) degrees")
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError("elevation must be in [-90, 90] degrees")


# ---------------------------------------------------------------------------
# direction <-> equirect coordinates

def uv_to_dir(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    theta = v * np.pi
    phi = (u - 0.5) * (2.0 * np.pi)
    st = np.sin(theta)
    return np.stack([st * np.sin(phi), np.cos(theta), -st * np.cos(phi)], axis=0)


def dir_to_uv(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = d[0], d[1], d[2]
    u = (np.arctan2(x, -z) / (2.0 * np.pi) + 0.5) % 1.0
    v = np.arccos(np.clip(y / np.maximum(np.sqrt(x * x + y * y + z * z), 1e-300), -1.0, 1.0)) / np.pi
    return u, v


def texel_dirs(h: int, w: int) -> np.ndarray:
    """(3, h, w) unit directions at texel centers."""
    v = (np.arange(h, dtype=np.float64) + 0.5) / h
    u = (np.arange(w, dtype=np.float64) + 0.5) / w
    uu, vv = np.meshgrid(u, v)
    return uv_to_dir(uu, vv)


def texel_solid_angles(h: int, w: int) -> np.ndarray:
    """(h, w) solid angles sin(theta) * dtheta * dphi; sums to ~4*pi."""
    theta = (np.arange(h, dtype=np.float64) + 0.5) / h * np.pi
    col = np.sin(theta) * (np.pi / h) * (2.0 * np.pi / w)
    return np.repeat(col[:, None], w, axis=1)


def sample_env_bilinear(env: Tensor, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup with azimuthal wrap and polar clamp; returns (3, ...)."""
    _, h, w = env.shape
    x = u * w - 0.5
    y = np.clip(v * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    wx = (x - x0).astype(np.float64)
    wy = (y - y0).astype(np.float64)
    x1 = (x0 + 1) % w
    x0 = x0 % w
    y1 = np.minimum(y0 + 1, h - 1)
    e = env.astype(np.float64)
    top = e[:, y0, x0] * (1 - wx) + e[:, y0, x1] * wx
    bot = e[:, y1, x0] * (1 - wx) + e[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


# ---------------------------------------------------------------------------
# mirror ball <-> environment map

def _disk_coords(size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized pixel-center coords (x right, y up) and the in-disk mask."""
    c = (np.arange(size, dtype=np.float64) + 0.5) / size
    x = c * 2.0 - 1.0
    y = 1.0 - c * 2.0
    xx, yy = np.meshgrid(x, y)
    inside = xx * xx + yy * yy <= 1.0
    return xx, yy, inside


def envmap_to_ball(env: Tensor, out_size: int = 256) -> Tensor:
    """Render the orthographic mirror-ball view of an environment map."""
    env = require_envmap(env)
    xx, yy, inside = _disk_coords(out_size)
    nz2 = np.clip(1.0 - xx * xx - yy * yy, 0.0, None)
    nz = np.sqrt(nz2)
    rx = 2.0 * xx * nz
    ry = 2.0 * yy * nz
    rz = 2.0 * nz2 - 1.0
    u, v = dir_to_uv(np.stack([rx, ry, rz], axis=0))
    out = sample_env_bilinear(env, u, v)
    out = np.where(inside[None, :, :], out, 0.0)
    return out.astype(np.float32)


def ball_to_envmap(ball: Tensor, out: tuple[int, int] = ENV_DEFAULT_SIZE) -> Tensor:
    """Unwrap a square mirror-ball image into an equirectangular map.

    Each texel direction R maps back to the ball normal
    normalize(R + (0,0,1)) and samples the disk at (n_x, n_y) bilinearly;
    pixels outside the inscribed disk carry no signal and are excluded by
    renormalizing the bilinear weights over in-disk neighbors.
    """
    ball = require_chw(ball)
    if ball.shape[1] != ball.shape[2]:
        raise ValueError(f"ball image must be square, got {ball.shape}")
    size = ball.shape[1]
    h, w = out
    d = texel_dirs(h, w)
    half = d + np.array([0.0, 0.0, 1.0])[:, None, None]
    norm = np.sqrt((half * half).sum(axis=0))
    rim = norm < 1e-9  # exact camera-forward direction: fill from the rim
    safe = np.where(rim, 1.0, norm)
    nx = np.where(rim, 1.0, half[0] / safe)
    ny = np.where(rim, 0.0, half[1] / safe)

    col = (nx + 1.0) / 2.0 * size - 0.5
    row = (1.0 - ny) / 2.0 * size - 0.5
    col = np.clip(col, 0.0, size - 1.0)
    row = np.clip(row, 0.0, size - 1.0)
    c0 = np.floor(col).astype(np.int64)
    r0 = np.floor(row).astype(np.int64)
    wc = col - c0
    wr = row - r0
    c1 = np.minimum(c0 + 1, size - 1)
    r1 = np.minimum(r0 + 1, size - 1)

    _, _, disk = _disk_coords(size)
    b = ball.astype(np.float64)
    acc = np.zeros((3, h, w), dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)
    for rr, cc, wgt in ((r0, c0, (1 - wr) * (1 - wc)), (r0, c1, (1 - wr) * wc),
                        (r1, c0, wr * (1 - wc)), (r1, c1, wr * wc)):
        valid = disk[rr, cc]
        wv = wgt * valid
        acc += b[:, rr, cc] * wv[None]
        wsum += wv
    # a sample whose whole 2x2 footprint is off-disk: pull to the nearest
    # in-disk point by shrinking the radius slightly
    dead = wsum <= 0.0
    if np.any(dead):
        shrink = 1.0 - 2.0 / size
        cold = np.clip((nx * shrink + 1.0) / 2.0 * size - 0.5, 0, size - 1)
        rowd = np.clip((1.0 - ny * shrink) / 2.0 * size - 0.5, 0, size - 1)
        ri = np.rint(rowd).astype(np.int64)
        ci = np.rint(cold).astype(np.int64)
        acc[:, dead] = b[:, ri[dead], ci[dead]]
        wsum[dead] = 1.0
    return (acc / wsum[None]).astype(np.float32)


# ---------------------------------------------------------------------------
# perspective crops

def crop_pano(env: Tensor, spec: CropSpec) -> Tensor:
    """Pinhole crop of an equirectangular map (bilinear sampling).

    Positive azimuth pans toward +x (increasing u), positive elevation
    looks up.
    """
    env = require_envmap(env)
    h, w = spec.out_size
    focal = (h / 2.0) / np.tan(np.radians(spec.fov_v_deg) / 2.0)
    xs = (np.arange(w, dtype=np.float64) + 0.5 - w / 2.0) / focal
    ys = (h / 2.0 - (np.arange(h, dtype=np.float64) + 0.5)) / focal
    xx, yy = np.meshgrid(xs, ys)
    d = np.stack([xx, yy, -np.ones_like(xx)], axis=0)
    d /= np.sqrt((d * d).sum(axis=0, keepdims=True))

    e = np.radians(spec.elevation_deg)
    a = np.radians(spec.azimuth_deg)
    rx = np.array([[1, 0, 0], [0, np.cos(e), -np.sin(e)], [0, np.sin(e), np.cos(e)]])
    ry = np.array([[np.cos(a), 0, -np.sin(a)], [0, 1, 0], [np.sin(a), 0, np.cos(a)]])
    rot = ry @ rx
    dw = np.tensordot(rot, d, axes=(1, 0))
    u, v = dir_to_uv(dw)
    return sample_env_bilinear(env, u, v).astype(np.float32)


# ---------------------------------------------------------------------------
# sphere renders

def _integrate_lobe(env: Tensor, axes: np.ndarray, exponent: "float | None",
                    chunk: int = 512) -> np.ndarray:
    """Sum_texels L(w) * max(0, axis . w)^p * dOmega for each axis row.

    axes: (N, 3); returns (N, 3). exponent None means p = 1 (cosine lobe).
    """
    _, h, w = env.shape
    dirs = texel_dirs(h, w).reshape(3, -1)
    dom = texel_solid_angles(h, w).reshape(-1)
    lw = env.astype(np.float64).reshape(3, -1) * dom[None, :]
    out = np.empty((axes.shape[0], 3), dtype=np.float64)
    for lo in range(0, axes.shape[0], chunk):
        cos = axes[lo:lo + chunk] @ dirs  # (n, HW)
        np.maximum(cos, 0.0, out=cos)
        if exponent is not None and exponent != 1.0:
            np.power(cos, exponent, out=cos)
        out[lo:lo + chunk] = cos @ lw.T
    return out


def render_sphere(env: Tensor, mat: SphereMaterial, out_size: int = 64) -> Tensor:
    """Orthographic render of a sphere under the environment.

    mirror: reflection lookup scaled by albedo. gray-diffuse: albedo/pi
    times the cosine-weighted irradiance. matte-silver: normalized glossy
    lobe around the reflection direction, (s+1)/(2*pi) * sum L*max(0,R.w)^s,
    which integrates to 1 over the sphere for any exponent.
    """
    env = require_envmap(env)
    if mat.kind == "mirror":
        return (np.float32(mat.albedo) * envmap_to_ball(env, out_size)).astype(np.float32)
    xx, yy, inside = _disk_coords(out_size)
    nz = np.sqrt(np.clip(1.0 - xx * xx - yy * yy, 0.0, None))
    flat = inside.reshape(-1)
    if mat.kind == "gray-diffuse":
        axes = np.stack([xx, yy, nz], axis=-1).reshape(-1, 3)[flat]
        vals = _integrate_lobe(env, axes, None) * (mat.albedo / np.pi)
    else:  # matte-silver
        rx = 2.0 * xx * nz
        ry = 2.0 * yy * nz
        rz = 2.0 * nz * nz - 1.0
        axes = np.stack([rx, ry, rz], axis=-1).reshape(-1, 3)[flat]
        s = mat.gloss_exponent
        vals = _integrate_lobe(env, axes, s) * (mat.albedo * (s + 1.0) / (2.0 * np.pi))
    out = np.zeros((3, out_size * out_size), dtype=np.float64)
    out[:, flat] = vals.T
    return out.reshape(3, out_size, out_size).astype(np.float32)


def sphere_array_layout(grid: tuple[int, int], out_size: tuple[int, int]):
    """Sphere diameter, gap and top-left corners for the array protocol
    (quarter-radius gaps, block centered in the canvas)."""
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ValueError("grid must be at least 1x1")
    h, w = out_size
    d = int(min(h / (rows + (rows - 1) / 8.0), w / (cols + (cols - 1) / 8.0)))
    if d < 2:
        raise ValueError(f"canvas {out_size} too small for a {rows}x{cols} array")
    gap = d // 8
    span_h = rows * d + (rows - 1) * gap
    span_w = cols * d + (cols - 1) * gap
    off_h = (h - span_h) // 2
    off_w = (w - span_w) // 2
    corners = [(off_h + r * (d + gap), off_w + c * (d + gap))
               for r in range(rows) for c in range(cols)]
    return d, gap, corners


def render_sphere_array(env: Tensor, grid: tuple[int, int] = (3, 8),
                        out_size: tuple[int, int] = (120, 320),
                        mat: SphereMaterial = GRAY_DIFFUSE) -> Tensor:
    """Tile identical diffuse spheres (shared environment) on a black canvas."""
    env = require_envmap(env)
    d, _, corners = sphere_array_layout(grid, out_size)
    tile = render_sphere(env, mat, d)
    canvas = np.zeros((3, out_size[0], out_size[1]), dtype=np.float32)
    for (r0, c0) in corners:
        canvas[:, r0:r0 + d, c0:c0 + d] = tile
    return require_finite(canvas)
