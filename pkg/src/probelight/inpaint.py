"""Masked inpainting with background imputation and its iterative wrapper.

The sampling loop visits the schedule's step indices from denoising_start
down. Each step predicts noise, applies the deterministic update to the next
index, rebuilds the off-mask region from the known background noised to the
current level with the predicted noise ("as-written" imputation), and
composites. The trailing step of the written algorithm operates at t = 0
where both the update and the imputation coefficient sqrt(1 - abar_0) vanish
identically, so it reduces to the final unmasked composite performed here;
no denoiser call is spent on it.

The iterative wrapper generates N balls per round (full strength on round 1,
eta after), medians them pixelwise, composites the median into the image and
finishes with one more SDEdit pass. Ball seeds derive from (master seed, ev,
round, ball index), so results do not depend on execution order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .denoisers import Conditioning, Denoiser, DenoiserCall
from .rng import SeededRng, derive_seed, gaussian_like
from .schedule import NoiseSchedule, add_noise, ddim_update
from .tensor import Tensor, require_chw, require_finite

IMPUTE_AS_WRITTEN = "as-written"
IMPUTE_T_PREV_FRESH = "t-prev-fresh-noise"

LoraSelector = "str | None | callable"


@dataclass(frozen=True)
class BallPlacement:
    diameter_px: int = 256
    image_size: tuple[int, int] = (1024, 1024)  # (H, W)
    center: "tuple[float, float] | None" = None  # (row, col); None = image center

    def __post_init__(self):
        h, w = self.image_size
        if self.diameter_px <= 0:
            raise ValueError("ball diameter must be positive")
        if self.diameter_px > min(h, w):
            raise ValueError(f"ball diameter {self.diameter_px} exceeds image {self.image_size}")
        r = self.diameter_px / 2.0
        cy, cx = self.center_point
        if cy - r < 0 or cy + r > h or cx - r < 0 or cx + r > w:
            raise ValueError("circle extends outside the image")

    @property
    def center_point(self) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        return (self.image_size[0] / 2.0, self.image_size[1] / 2.0)


@dataclass(frozen=True)
class InpaintConfig:
    eta: float = 0.8
    k: int = 2
    n_balls: int = 30
    n_steps: int = 30

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.k < 1 or self.n_balls < 1 or self.n_steps < 1:
            raise ValueError("k, n_balls and n_steps must be >= 1")


def make_ball_mask(p: BallPlacement) -> Tensor:
    """Binary (1, H, W) mask: 1 where the pixel center lies within the
    circle radius of the placement center. Hard edge, no anti-aliasing."""
    h, w = p.image_size
    cy, cx = p.center_point
    r = p.diameter_px / 2.0
    yy = np.arange(h, dtype=np.float64)[:, None] + 0.5 - cy
    xx = np.arange(w, dtype=np.float64)[None, :] + 0.5 - cx
    inside = (yy * yy + xx * xx) <= r * r
    return inside[None, :, :].astype(np.float32)


def paint_depth_circle(depth: Tensor, p: BallPlacement, closer_is: str = "smaller") -> Tensor:
    """Fill the ball circle with the depth value closest to the camera
    (the map minimum when smaller means closer, else the maximum)."""
    depth = require_chw(depth, 1)
    if closer_is == "smaller":
        fill = float(depth.min())
    elif closer_is == "larger":
        fill = float(depth.max())
    else:
        raise ValueError(f"closer_is must be 'smaller' or 'larger', got {closer_is!r}")
    mask = make_ball_mask(BallPlacement(p.diameter_px, (depth.shape[1], depth.shape[2]), p.center))
    return (1.0 - mask) * depth + mask * np.float32(fill)


def _lora_at(lora, t: int) -> "str | None":
    return lora(t) if callable(lora) else lora


def denoise_steps(z_image: Tensor, z: Tensor, mask: Tensor, cond: Conditioning,
                  denoiser: Denoiser, sched: NoiseSchedule, steps: list[int], *,
                  run_seed: int = 0, lora=None, impute_level: str = IMPUTE_AS_WRITTEN,
                  rng: "SeededRng | None" = None,
                  stop_level: "int | None" = None) -> tuple[Tensor, Tensor]:
    """Core loop over `steps`; returns (latent, last predicted noise).

    With stop_level set (a member of `steps`), the chain halts once the
    latent reaches that level, before calling the denoiser there.
    """
    if impute_level not in (IMPUTE_AS_WRITTEN, IMPUTE_T_PREV_FRESH):
        raise ValueError(f"unknown impute level {impute_level!r}")
    if impute_level == IMPUTE_T_PREV_FRESH and rng is None:
        raise ValueError("fresh-noise imputation needs an rng")
    mask = np.asarray(mask, dtype=np.float32)
    eps = np.zeros_like(z)
    for i, t in enumerate(steps):
        if stop_level is not None and t <= stop_level:
            break
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        eps = denoiser.denoise(DenoiserCall(z=z, t=t, cond=cond,
                                            run_seed=run_seed, active_lora=_lora_at(lora, t)))
        require_finite(eps, "predicted noise")
        z = ddim_update(z, t, t_prev, eps, sched)
        if impute_level == IMPUTE_AS_WRITTEN:
            z_known = add_noise(z_image, t, eps, sched)
        else:
            fresh = gaussian_like(z.shape, rng)
            z_known = add_noise(z_image, t_prev, fresh, sched)
        z = (1.0 - mask) * z_known + mask * z
    return z, eps


def inpaint(z_image: Tensor, z_init: Tensor, mask: Tensor, cond: Conditioning,
            denoiser: Denoiser, sched: NoiseSchedule, denoising_start: int, *,
            run_seed: int = 0, lora=None, impute_level: str = IMPUTE_AS_WRITTEN,
            rng: "SeededRng | None" = None) -> Tensor:
    """Denoise z_init from denoising_start to clean while imputing the
    off-mask region from z_image; returns the decoded composite."""
    steps = sched.steps_from(denoising_start)
    z, _ = denoise_steps(z_image, z_init, mask, cond, denoiser, sched, steps,
                         run_seed=run_seed, lora=lora, impute_level=impute_level, rng=rng)
    mask = np.asarray(mask, dtype=np.float32)
    z = (1.0 - mask) * z_image + mask * z  # t=0 composite; coefficient on eps is 0
    return denoiser.decode(z)


def sdedit_start_step(eta: float, sched: NoiseSchedule) -> int:
    """Nearest sampling step to eta * T; ties prefer the larger index."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    return sched.nearest_step(eta * sched.T)


def sdedit_inpaint(image: Tensor, mask: Tensor, cond: Conditioning, denoiser: Denoiser,
                   sched: NoiseSchedule, eta: float, rng: SeededRng, *,
                   lora=None, impute_level: str = IMPUTE_AS_WRITTEN) -> Tensor:
    """Noise the encoded image up to the step nearest eta * T, then inpaint."""
    z = denoiser.encode(image)
    start = sdedit_start_step(eta, sched)
    eps0 = gaussian_like(z.shape, rng)
    z_init = add_noise(z, start, eps0, sched)
    return inpaint(z, z_init, mask, cond, denoiser, sched, start,
                   run_seed=rng.seed, lora=lora, impute_level=impute_level, rng=rng)


def pixelwise_median(balls: list[Tensor]) -> Tensor:
    """Per-channel per-pixel median; even counts average the middle two."""
    if not balls:
        raise ValueError("median of an empty list")
    first = balls[0]
    for b in balls[1:]:
        if b.shape != first.shape:
            raise ValueError("median inputs must share one shape")
    return np.median(np.stack(balls, axis=0), axis=0).astype(np.float32)


def derive_ball_seed(master_seed: int, ev: float, round_idx: int, ball_idx: int) -> int:
    """Per-ball run seed; index-based so scheduling order cannot matter."""
    return derive_seed(master_seed, float(ev), int(round_idx), int(ball_idx))


FINAL_ROUND_BALL = 0  # ball index reserved for the trailing SDEdit pass


@dataclass
class IterativeReport:
    image: Tensor
    round_medians: list[Tensor] = field(default_factory=list)
    ball_seeds: list[list[int]] = field(default_factory=list)
    final_seed: int = 0


def iterative_inpaint_report(image: Tensor, mask: Tensor, cond: Conditioning,
                             denoiser: Denoiser, sched: NoiseSchedule, cfg: InpaintConfig,
                             rng: SeededRng, *, jobs: int = 1, lora=None,
                             impute_level: str = IMPUTE_AS_WRITTEN) -> IterativeReport:
    """k rounds of {N single-seed balls, pixelwise median, composite into
    the image}, then one trailing SDEdit pass at eta. Returns the final
    composite together with the per-round medians and the seeds used."""
    mask = np.asarray(mask, dtype=np.float32)
    report = IterativeReport(image=image)
    current = image
    for round_idx in range(1, cfg.k + 1):
        eta_round = cfg.eta if round_idx > 1 else 1.0
        seeds = [derive_ball_seed(rng.seed, cond.ev, round_idx, j + 1)
                 for j in range(cfg.n_balls)]
        report.ball_seeds.append(seeds)

        def one_ball(seed: int, src=current, eta=eta_round) -> Tensor:
            return sdedit_inpaint(src, mask, cond, denoiser, sched, eta,
                                  SeededRng(seed), lora=lora, impute_level=impute_level)

        if jobs > 1 and cfg.n_balls > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                balls = list(pool.map(one_ball, seeds))
        else:
            balls = [one_ball(s) for s in seeds]
        median = pixelwise_median(balls)
        report.round_medians.append(median)
        current = (1.0 - mask) * current + mask * median
    report.final_seed = derive_ball_seed(rng.seed, cond.ev, cfg.k + 1, FINAL_ROUND_BALL)
    final = sdedit_inpaint(current, mask, cond, denoiser, sched, cfg.eta,
                           SeededRng(report.final_seed), lora=lora, impute_level=impute_level)
    report.image = (1.0 - mask) * image + mask * final
    return report


def iterative_inpaint(image: Tensor, mask: Tensor, cond: Conditioning, denoiser: Denoiser,
                      sched: NoiseSchedule, cfg: InpaintConfig, rng: SeededRng, *,
                      jobs: int = 1, lora=None,
                      impute_level: str = IMPUTE_AS_WRITTEN) -> Tensor:
    return iterative_inpaint_report(image, mask, cond, denoiser, sched, cfg, rng,
                                    jobs=jobs, lora=lora, impute_level=impute_level).image
