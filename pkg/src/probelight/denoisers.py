"""Denoiser contract, conditioning, toy analytic denoisers and NFE counting.

A denoiser maps (latent, timestep, conditioning, run seed) to predicted
noise. Toy denoisers invert the forward noising analytically against a fixed
target, which makes every sampling algorithm testable without a neural
network; the remote client (remote.py) binds a real model over the wire.

Exposure control works through conditioning only: the prompt embedding is a
linear interpolation between the base prompt embedding and the "black dark"
prompt embedding, parameterised by ev in [ev_min, 0].
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .lora import LoraStack, active_lora_name, compose_lora
from .rng import SeededRng, derive_seed
from .schedule import NoiseSchedule
from .tensor import Tensor, require_same_shape

PROMPT = "a perfect mirrored reflective chrome ball sphere"
NEGATIVE_PROMPT = "matte, diffuse, flat, dull"
DEFAULT_GUIDANCE = 5.0
DEFAULT_EV_MIN = -5.0

_LOBE_SALT = "lobe-target"


def _default_embed_o() -> np.ndarray:
    return np.array([1.0, 0.0], dtype=np.float64)


def _default_embed_d() -> np.ndarray:
    return np.array([0.0, 1.0], dtype=np.float64)


@dataclass(frozen=True)
class Conditioning:
    ev: float = 0.0
    ev_min: float = DEFAULT_EV_MIN
    embed_o: np.ndarray = field(default_factory=_default_embed_o)
    embed_d: np.ndarray = field(default_factory=_default_embed_d)
    guidance_scale: float = DEFAULT_GUIDANCE
    prompt_text: str = PROMPT
    negative_prompt_text: str = NEGATIVE_PROMPT

    def __post_init__(self):
        if not self.ev_min < 0:
            raise ValueError(f"ev_min must be negative, got {self.ev_min}")
        if not self.ev_min <= self.ev <= 0:
            raise ValueError(f"ev={self.ev} outside [{self.ev_min}, 0]")
        if np.shape(self.embed_o) != np.shape(self.embed_d):
            raise ValueError("prompt embeddings must have equal length")

    def with_ev(self, ev: float) -> "Conditioning":
        return Conditioning(ev=ev, ev_min=self.ev_min, embed_o=self.embed_o,
                            embed_d=self.embed_d, guidance_scale=self.guidance_scale,
                            prompt_text=self.prompt_text,
                            negative_prompt_text=self.negative_prompt_text)


def interp_embedding(cond: Conditioning) -> np.ndarray:
    """Exposure-interpolated embedding: o + (ev / ev_min) * (d - o)."""
    w = cond.ev / cond.ev_min
    return np.asarray(cond.embed_o, dtype=np.float64) + w * (
        np.asarray(cond.embed_d, dtype=np.float64) - np.asarray(cond.embed_o, dtype=np.float64))


@dataclass(frozen=True)
class DenoiserCall:
    z: Tensor
    t: int
    cond: Conditioning
    run_seed: int = 0
    active_lora: "str | None" = None


class Denoiser:
    """Base contract. encode/decode default to the identity codec."""

    def denoise(self, call: DenoiserCall) -> Tensor:
        raise NotImplementedError

    def encode(self, image: Tensor) -> Tensor:
        return image

    def decode(self, z: Tensor) -> Tensor:
        return z

    def close(self) -> None:
        pass


class NfeCounter:
    """Per-lora denoiser call counts; increments are atomic."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}

    def add(self, lora_name: "str | None") -> None:
        key = lora_name if lora_name is not None else "base"
        with self._lock:
            self._counts[key] = self._counts.get(key, 0) + 1

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def snapshot(self) -> dict:
        with self._lock:
            per = dict(sorted(self._counts.items()))
        return {"per_lora": per, "total": sum(per.values())}


class CountingDenoiser(Denoiser):
    """Wraps any denoiser, counting one NFE per call keyed by active lora."""

    def __init__(self, inner: Denoiser, counter: "NfeCounter | None" = None):
        self.inner = inner
        self.counter = counter if counter is not None else NfeCounter()

    def denoise(self, call: DenoiserCall) -> Tensor:
        self.counter.add(call.active_lora)
        return self.inner.denoise(call)

    def encode(self, image: Tensor) -> Tensor:
        return self.inner.encode(image)

    def decode(self, z: Tensor) -> Tensor:
        return self.inner.decode(z)


def masked_noise_loss(eps_hat: Tensor, eps: Tensor, mask: Tensor) -> float:
    """Mean over all elements of (mask * (eps_hat - eps))^2."""
    require_same_shape(eps_hat, eps)
    m = np.broadcast_to(mask, eps.shape)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be binary")
    d = m.astype(np.float64) * (eps_hat.astype(np.float64) - eps.astype(np.float64))
    return float(np.mean(d * d))


class OracleDenoiser(Denoiser):
    """Analytic inverse of the forward noising toward a fixed target."""

    def __init__(self, target: Tensor, sched: NoiseSchedule):
        self.target = np.asarray(target, dtype=np.float32)
        self.sched = sched

    def _target_for(self, call: DenoiserCall) -> Tensor:
        return self.target

    def denoise(self, call: DenoiserCall) -> Tensor:
        if call.t == 0:
            return np.zeros_like(call.z)
        ab = self.sched.abar(call.t)
        target = self._target_for(call)
        require_same_shape(call.z, target)
        return (call.z - np.float32(ab ** 0.5) * target) / np.float32((1.0 - ab) ** 0.5)


def oracle_denoiser(target_x0: Tensor, sched: NoiseSchedule) -> OracleDenoiser:
    return OracleDenoiser(target_x0, sched)


class SeededLobeDenoiser(OracleDenoiser):
    """Oracle whose target is base + sigma * G(run_seed), G a fixed
    standard-normal image per seed. Stands in for the observed coupling
    between the initial noise map and the inpainted appearance."""

    def __init__(self, base: Tensor, sigma: float, sched: NoiseSchedule):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        super().__init__(base, sched)
        self.sigma = float(sigma)

    def target_for_seed(self, run_seed: int) -> Tensor:
        if self.sigma == 0.0:
            return self.target
        g = SeededRng(derive_seed(run_seed, _LOBE_SALT)).gaussian(self.target.shape)
        return self.target + np.float32(self.sigma) * g

    def _target_for(self, call: DenoiserCall) -> Tensor:
        return self.target_for_seed(call.run_seed)


def seeded_lobe_denoiser(base_x0: Tensor, sigma: float, sched: NoiseSchedule) -> SeededLobeDenoiser:
    return SeededLobeDenoiser(base_x0, sigma, sched)


class EvScaledOracle(OracleDenoiser):
    """Oracle whose target is the EV0 target with luminance rescaled by
    2^ev in linear space, i.e. target * 2^(ev/gamma) in display space.
    Mirrors exposure-bracketed training targets for toy pipelines."""

    def __init__(self, target: Tensor, sched: NoiseSchedule, gamma: float = 2.4):
        super().__init__(target, sched)
        self.gamma = float(gamma)

    def _target_for(self, call: DenoiserCall) -> Tensor:
        scale = 2.0 ** (call.cond.ev / self.gamma)
        return self.target * np.float32(scale)


class LinearLoraDenoiser(Denoiser):
    """eps_hat = unflatten(W(t) @ flatten(z)) with W composed per timestep."""

    def __init__(self, stack: LoraStack):
        self.stack = stack
        self._cache: dict[int, np.ndarray] = {}

    def weight_at(self, t: int) -> np.ndarray:
        if t not in self._cache:
            self._cache[t] = compose_lora(self.stack, t)
        return self._cache[t]

    def active_name(self, t: int) -> "str | None":
        return active_lora_name(self.stack, t)

    def denoise(self, call: DenoiserCall) -> Tensor:
        w = self.weight_at(call.t)
        flat = call.z.reshape(-1).astype(np.float64)
        if w.shape[1] != flat.size:
            raise ValueError(f"weight shape {w.shape} incompatible with latent size {flat.size}")
        return (w @ flat).astype(np.float32).reshape(call.z.shape)


def linear_lora_denoiser(stack: LoraStack) -> LinearLoraDenoiser:
    return LinearLoraDenoiser(stack)
