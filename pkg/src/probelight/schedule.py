"""Noise schedule and the deterministic denoising update.

The cumulative signal fraction abar_t (abar_0 = 1, strictly decreasing,
abar_T ~ 0) drives all diffusion arithmetic:

    forward:   z_t   = sqrt(abar_t) * z_0 + sqrt(1 - abar_t) * eps
    inversion: z0hat = (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
    update:    z'    = sqrt(abar_p) * z0hat + sqrt(1 - abar_p) * eps_hat

Sampling visits a strictly decreasing subsequence of timesteps (uniformly
spaced over [1, T], first entry T). Schedule math is float64 throughout;
coefficients are cast to float32 at the tensor boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, require_same_shape

DEFAULT_T = 1000
DEFAULT_STEPS = 30
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    n_steps: int
    beta_start: float
    beta_end: float
    alpha_bar: np.ndarray = field(repr=False)  # (T+1,) float64, index 0..T
    step_indices: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.shape != (self.T + 1,):
            raise ValueError("alpha_bar must have T+1 entries")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not ab[self.T] < 1e-2:
            raise ValueError(f"alpha_bar[T] = {ab[self.T]:.3g}, expected ~0")
        steps = self.step_indices
        if not steps or steps[0] != self.T:
            raise ValueError("step_indices must start at T")
        if any(s2 >= s1 for s1, s2 in zip(steps, steps[1:])):
            raise ValueError("step_indices must be strictly decreasing")
        if steps[-1] < 1 or steps[0] > self.T:
            raise ValueError("step_indices must lie in [1, T]")

    def abar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t])

    def position(self, t: int) -> int:
        try:
            return self.step_indices.index(t)
        except ValueError:
            raise ValueError(f"{t} is not a sampling step of this schedule")

    def steps_from(self, start: int) -> list[int]:
        """Sampling steps from `start` (inclusive) down to the last one."""
        return list(self.step_indices[self.position(start):])

    def nearest_step(self, t: float) -> int:
        """Closest sampling step to a fractional timestep; ties round up."""
        return max(self.step_indices, key=lambda s: (-abs(s - t), s))

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.T,
            "n_steps": self.n_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }


def make_schedule(kind: str = "scaled-linear",
                  T: int = DEFAULT_T,
                  n_steps: int = DEFAULT_STEPS,
                  beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Build a schedule; kinds: scaled-linear (betas linear in sqrt-space)
    and cosine (squared-cosine abar with betas clipped to 0.999)."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"need 1 <= n_steps <= T, got n_steps={n_steps}, T={T}")
    if kind == "scaled-linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T, dtype=np.float64) ** 2
    elif kind == "cosine":
        s = 0.008
        t = np.arange(T + 1, dtype=np.float64)
        f = np.cos((t / T + s) / (1 + s) * (np.pi / 2)) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    steps = np.round(np.linspace(T, 1, n_steps)).astype(int)
    return NoiseSchedule(kind=kind, T=T, n_steps=n_steps,
                         beta_start=beta_start, beta_end=beta_end,
                         alpha_bar=alpha_bar, step_indices=tuple(int(s) for s in steps))


def schedule_from_config(cfg: dict) -> NoiseSchedule:
    return make_schedule(kind=cfg.get("kind", "scaled-linear"),
                         T=int(cfg.get("T", DEFAULT_T)),
                         n_steps=int(cfg.get("n_steps", DEFAULT_STEPS)),
                         beta_start=float(cfg.get("beta_start", DEFAULT_BETA_START)),
                         beta_end=float(cfg.get("beta_end", DEFAULT_BETA_END)))


def add_noise(x0: Tensor, t: int, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    require_same_shape(x0, eps)
    ab = sched.abar(t)
    return np.float32(math.sqrt(ab)) * x0 + np.float32(math.sqrt(1.0 - ab)) * eps


def predict_x0(z_t: Tensor, t: int, eps_hat: Tensor, sched: NoiseSchedule) -> Tensor:
    require_same_shape(z_t, eps_hat)
    ab = sched.abar(t)
    if ab == 0.0:
        raise ValueError("alpha_bar is exactly 0 at this timestep")
    return (z_t - np.float32(math.sqrt(1.0 - ab)) * eps_hat) / np.float32(math.sqrt(ab))


def ddim_update(z: Tensor, t: int, t_prev: int, eps_hat: Tensor,
                sched: NoiseSchedule) -> Tensor:
    """Deterministic update from step t to t_prev (t > t_prev >= 0)."""
    if t_prev >= t:
        raise ValueError(f"require t > t_prev, got t={t}, t_prev={t_prev}")
    if t_prev < 0:
        raise ValueError("t_prev must be >= 0")
    x0 = predict_x0(z, t, eps_hat, sched)
    ab_p = sched.abar(t_prev)
    return np.float32(math.sqrt(ab_p)) * x0 + np.float32(math.sqrt(1.0 - ab_p)) * eps_hat
