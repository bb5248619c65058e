"""Low-rank adapter composition and the timestep swap schedule.

A stack holds a frozen base weight matrix plus named low-rank deltas
(W' = W + scale * A @ B). The swap schedule is a table of disjoint inclusive
timestep intervals covering [1, T], each naming the single delta active
there (or None for base-only). The default swap assigns "turbo" to the high
noise interval [800, T] and "exposure" to [1, 799]; the boundary step 800
belongs to turbo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LORA_TURBO = "turbo"
LORA_EXPOSURE = "exposure"
DEFAULT_LORA_SCALE = 0.75


@dataclass(frozen=True)
class LoraDelta:
    name: str
    A: np.ndarray  # (m, d)
    B: np.ndarray  # (d, n)
    scale: float = DEFAULT_LORA_SCALE

    def __post_init__(self):
        if self.A.ndim != 2 or self.B.ndim != 2 or self.A.shape[1] != self.B.shape[0]:
            raise ValueError(f"incompatible low-rank factors {self.A.shape} x {self.B.shape}")
        d = self.A.shape[1]
        if d > min(self.A.shape[0], self.B.shape[1]):
            raise ValueError(f"rank {d} exceeds matrix dimensions")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")

    @property
    def delta(self) -> np.ndarray:
        return self.A @ self.B


SwapInterval = tuple[int, int, "str | None"]  # (t_low, t_high, delta name), inclusive


@dataclass(frozen=True)
class LoraStack:
    w_base: np.ndarray
    deltas: tuple[LoraDelta, ...] = ()
    swap_schedule: tuple[SwapInterval, ...] = ()
    T: int = 1000

    def __post_init__(self):
        names = {d.name for d in self.deltas}
        if len(names) != len(self.deltas):
            raise ValueError("delta names must be unique")
        ivs = sorted(self.swap_schedule)
        if not ivs:
            raise ValueError("swap schedule must not be empty")
        if ivs[0][0] != 1 or ivs[-1][1] != self.T:
            raise ValueError(f"swap schedule must cover [1, {self.T}]")
        for (lo, hi, name) in ivs:
            if lo > hi:
                raise ValueError(f"empty interval ({lo}, {hi})")
            if name is not None and name not in names:
                raise ValueError(f"swap schedule references unknown delta {name!r}")
        for (_, hi, _), (lo2, _, _) in zip(ivs, ivs[1:]):
            if lo2 != hi + 1:
                raise ValueError("swap intervals must be disjoint and contiguous")

    def delta_by_name(self, name: str) -> LoraDelta:
        for d in self.deltas:
            if d.name == name:
                return d
        raise KeyError(name)


def active_lora_name(stack: LoraStack, t: int) -> str | None:
    for lo, hi, name in stack.swap_schedule:
        if lo <= t <= hi:
            return name
    raise ValueError(f"timestep {t} not covered by the swap schedule")


def compose_lora(stack: LoraStack, t: int) -> np.ndarray:
    """Effective weights at timestep t: W + scale * A @ B for the active delta."""
    name = active_lora_name(stack, t)
    if name is None:
        return stack.w_base.copy()
    d = stack.delta_by_name(name)
    return stack.w_base + d.scale * (d.A @ d.B)


def swap_threshold_timestep(fraction: float, T: int = 1000) -> int:
    if not 0.0 < fraction < 1.0:
        raise ValueError("swap threshold fraction must be in (0, 1)")
    return int(round(fraction * T))


def default_swap_schedule(T: int = 1000, threshold_t: int = 800) -> tuple[SwapInterval, ...]:
    return ((1, threshold_t - 1, LORA_EXPOSURE), (threshold_t, T, LORA_TURBO))
