"""End-to-end estimation pipelines over the exposure bracket.

Four variants share one skeleton (per EV: produce an LDR ball image; then
crop the ball, merge the bracket into an HDR ball and unwrap it into an
environment map):

  diffusionlight  iterative inpainting (k rounds of N-ball medians plus a
                  trailing SDEdit) with the exposure adapter throughout.
  turbo-sdedit    one full pass with the turbo adapter to get an average
                  ball, then SDEdit from it at the threshold strength with
                  the exposure adapter.
  turbo-pred      turbo pass stopped at the threshold step; the clean ball
                  is predicted there (optionally reusing the last noise
                  prediction), composited, and refined by one SDEdit pass.
  turbo-swap      a single full pass whose active adapter switches from
                  turbo to exposure at the threshold timestep.

Denoiser calls are counted per adapter name; the closed-form expectations in
expected_nfe() must match instrumented runs exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .denoisers import (Conditioning, CountingDenoiser, Denoiser, DenoiserCall,
                        NfeCounter)
from .errors import ConfigError
from .hdr import GAMMA, ExposureBracket, merge_ldrs
from .inpaint import (IMPUTE_AS_WRITTEN, BallPlacement, InpaintConfig,
                      derive_ball_seed, iterative_inpaint_report, make_ball_mask,
                      paint_depth_circle, sdedit_inpaint, denoise_steps)
from .lora import LORA_EXPOSURE, LORA_TURBO, swap_threshold_timestep
from .probe import ball_to_envmap
from .rng import SeededRng
from .schedule import NoiseSchedule, add_noise, predict_x0
from .tensor import Tensor, checksum, clamp01, require_chw, require_finite

PIPELINE_KINDS = ("diffusionlight", "turbo-sdedit", "turbo-pred", "turbo-swap")
DEFAULT_EVS = (0.0, -2.5, -5.0)


@dataclass(frozen=True)
class PipelineSpec:
    kind: str
    evs: tuple[float, ...] = DEFAULT_EVS
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    swap_threshold_fraction: float = 0.8
    ball_diameter: int = 256
    crop_size: int = 256
    env_size: tuple[int, int] = (128, 256)
    ev_min: float = -5.0
    guidance_scale: float = 5.0
    reuse_threshold_eps: bool = True
    impute_level: str = IMPUTE_AS_WRITTEN
    gamma: float = GAMMA

    def __post_init__(self):
        if self.kind not in PIPELINE_KINDS:
            raise ConfigError(f"unknown pipeline kind {self.kind!r}")
        if not self.evs or self.evs[0] != 0.0:
            raise ConfigError("EV list must start at 0")
        if any(b >= a for a, b in zip(self.evs, self.evs[1:])):
            raise ConfigError("EV list must be strictly decreasing")
        if not 0.0 < self.swap_threshold_fraction < 1.0:
            raise ConfigError("swap threshold fraction must be in (0, 1)")

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "evs": list(self.evs),
            "eta": self.inpaint.eta,
            "k": self.inpaint.k,
            "n_balls": self.inpaint.n_balls,
            "n_steps": self.inpaint.n_steps,
            "swap_threshold_fraction": self.swap_threshold_fraction,
            "ball_diameter": self.ball_diameter,
            "crop_size": self.crop_size,
            "env_size": list(self.env_size),
            "ev_min": self.ev_min,
            "guidance_scale": self.guidance_scale,
            "reuse_threshold_eps": self.reuse_threshold_eps,
            "impute_level": self.impute_level,
            "gamma": self.gamma,
        }


def spec_from_config(cfg: dict) -> PipelineSpec:
    known = {"kind", "evs", "eta", "k", "n_balls", "n_steps", "swap_threshold_fraction",
             "ball_diameter", "crop_size", "env_size", "ev_min", "guidance_scale",
             "reuse_threshold_eps", "impute_level", "gamma"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    inp = InpaintConfig(eta=float(cfg.get("eta", 0.8)), k=int(cfg.get("k", 2)),
                        n_balls=int(cfg.get("n_balls", 30)),
                        n_steps=int(cfg.get("n_steps", 30)))
    return PipelineSpec(
        kind=cfg["kind"],
        evs=tuple(float(e) for e in cfg.get("evs", DEFAULT_EVS)),
        inpaint=inp,
        swap_threshold_fraction=float(cfg.get("swap_threshold_fraction", 0.8)),
        ball_diameter=int(cfg.get("ball_diameter", 256)),
        crop_size=int(cfg.get("crop_size", 256)),
        env_size=tuple(int(s) for s in cfg.get("env_size", (128, 256))),
        ev_min=float(cfg.get("ev_min", -5.0)),
        guidance_scale=float(cfg.get("guidance_scale", 5.0)),
        reuse_threshold_eps=bool(cfg.get("reuse_threshold_eps", True)),
        impute_level=cfg.get("impute_level", IMPUTE_AS_WRITTEN),
        gamma=float(cfg.get("gamma", GAMMA)),
    )


@dataclass
class EstimateResult:
    per_ev_images: dict[float, Tensor]
    per_ev_crops: dict[float, Tensor]
    hdr_ball: Tensor
    env_map: Tensor
    nfe: dict
    manifest: dict
    debug: dict = field(default_factory=dict)

    def __post_init__(self):
        require_finite(self.env_map, "env map")
        if self.hdr_ball.min() < 0:
            raise ValueError("HDR ball must be non-negative")


def crop_ball(image: Tensor, mask: Tensor, size: int) -> Tensor:
    """Nearest-neighbor resample of the mask's bounding box to size x size."""
    m = np.asarray(mask)[0] > 0.5
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty mask")
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    box = image[:, r0:r1, c0:c1]
    ri = np.minimum((np.arange(size) + 0.5) * (r1 - r0) / size, r1 - r0 - 1).astype(int)
    ci = np.minimum((np.arange(size) + 0.5) * (c1 - c0) / size, c1 - c0 - 1).astype(int)
    return np.ascontiguousarray(box[:, ri[:, None], ci[None, :]])


def swap_lora_selector(threshold_t: int):
    """Timestep -> adapter name for the swapped single pass; the boundary
    timestep itself runs under turbo."""
    def select(t: int) -> str:
        return LORA_TURBO if t >= threshold_t else LORA_EXPOSURE
    return select


# ---------------------------------------------------------------------------
# per-EV strategies

def _ev_diffusionlight(image, mask, cond, denoiser, sched, spec, master_seed, jobs, debug):
    report = iterative_inpaint_report(image, mask, cond, denoiser, sched, spec.inpaint,
                                      SeededRng(master_seed), jobs=jobs,
                                      lora=LORA_EXPOSURE, impute_level=spec.impute_level)
    debug.setdefault("round_medians", {})[cond.ev] = report.round_medians
    seeds = {"rounds": report.ball_seeds, "final": report.final_seed}
    return report.image, seeds


def _ev_turbo_sdedit(image, mask, cond, denoiser, sched, spec, master_seed, jobs, debug):
    seed1 = derive_ball_seed(master_seed, cond.ev, 1, 1)
    seed2 = derive_ball_seed(master_seed, cond.ev, 2, 1)
    b_star = sdedit_inpaint(image, mask, cond, denoiser, sched, 1.0, SeededRng(seed1),
                            lora=LORA_TURBO, impute_level=spec.impute_level)
    debug.setdefault("average_ball", {})[cond.ev] = b_star
    out = sdedit_inpaint(b_star, mask, cond, denoiser, sched,
                         spec.swap_threshold_fraction, SeededRng(seed2),
                         lora=LORA_EXPOSURE, impute_level=spec.impute_level)
    return out, {"stages": [seed1, seed2]}


def _ev_turbo_pred(image, mask, cond, denoiser, sched, spec, master_seed, jobs, debug):
    seed1 = derive_ball_seed(master_seed, cond.ev, 1, 1)
    seed2 = derive_ball_seed(master_seed, cond.ev, 2, 1)
    rng1 = SeededRng(seed1)
    threshold = sched.nearest_step(spec.swap_threshold_fraction * sched.T)

    z = denoiser.encode(image)
    z_init = add_noise(z, sched.T, rng1.gaussian(z.shape), sched)
    z_thr, eps_last = denoise_steps(z, z_init, mask, cond, denoiser, sched,
                                    sched.steps_from(sched.T), run_seed=seed1,
                                    lora=LORA_TURBO, impute_level=spec.impute_level,
                                    rng=rng1, stop_level=threshold)
    if spec.reuse_threshold_eps:
        eps_thr = eps_last
    else:
        eps_thr = denoiser.denoise(DenoiserCall(z=z_thr, t=threshold, cond=cond,
                                                run_seed=seed1, active_lora=LORA_TURBO))
    x0 = predict_x0(z_thr, threshold, eps_thr, sched)
    debug.setdefault("pred_x0", {})[cond.ev] = x0
    comp = (1.0 - mask) * image + mask * denoiser.decode(x0)
    out = sdedit_inpaint(comp, mask, cond, denoiser, sched,
                         spec.swap_threshold_fraction, SeededRng(seed2),
                         lora=LORA_EXPOSURE, impute_level=spec.impute_level)
    return out, {"stages": [seed1, seed2], "threshold_step": threshold}


def _ev_turbo_swap(image, mask, cond, denoiser, sched, spec, master_seed, jobs, debug):
    seed1 = derive_ball_seed(master_seed, cond.ev, 1, 1)
    threshold_t = swap_threshold_timestep(spec.swap_threshold_fraction, sched.T)
    out = sdedit_inpaint(image, mask, cond, denoiser, sched, 1.0, SeededRng(seed1),
                         lora=swap_lora_selector(threshold_t),
                         impute_level=spec.impute_level)
    return out, {"stages": [seed1], "threshold_t": threshold_t}


_EV_RUNNERS = {
    "diffusionlight": _ev_diffusionlight,
    "turbo-sdedit": _ev_turbo_sdedit,
    "turbo-pred": _ev_turbo_pred,
    "turbo-swap": _ev_turbo_swap,
}


# ---------------------------------------------------------------------------
# shared driver

def run_estimate(image: Tensor, depth: Tensor, spec: PipelineSpec, sched: NoiseSchedule,
                 denoiser: Denoiser, master_seed: int, *, jobs: int = 1,
                 parallel_evs: bool = False,
                 base_cond: "Conditioning | None" = None) -> EstimateResult:
    """Run the selected pipeline across the EV bracket and assemble the
    HDR ball and environment map."""
    image = require_chw(image, 3)
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("input image must be LDR in [0, 1]")
    depth = require_chw(depth, 1)
    if depth.shape[1:] != image.shape[1:]:
        raise ValueError("depth map size must match the image")
    if spec.inpaint.n_steps != sched.n_steps:
        raise ConfigError("pipeline n_steps disagrees with the schedule")

    h, w = image.shape[1], image.shape[2]
    placement = BallPlacement(spec.ball_diameter, (h, w))
    mask = make_ball_mask(placement)
    painted_depth = paint_depth_circle(depth, placement)

    counting = CountingDenoiser(denoiser, NfeCounter())
    cond0 = base_cond if base_cond is not None else Conditioning(ev_min=spec.ev_min,
                                                                 guidance_scale=spec.guidance_scale)
    runner = _EV_RUNNERS[spec.kind]
    debug: dict = {}

    def run_ev(ev: float):
        cond = cond0.with_ev(ev)
        out, seeds = runner(image, mask, cond, counting, sched, spec,
                            master_seed, jobs, debug)
        return clamp01(out), seeds

    if parallel_evs and len(spec.evs) > 1:
        with ThreadPoolExecutor(max_workers=len(spec.evs)) as pool:
            outs = list(pool.map(run_ev, spec.evs))
    else:
        outs = [run_ev(ev) for ev in spec.evs]

    per_ev_images = {ev: out for ev, (out, _) in zip(spec.evs, outs)}
    seed_record = {f"{ev:g}": seeds for ev, (_, seeds) in zip(spec.evs, outs)}
    per_ev_crops = {ev: crop_ball(img, mask, spec.crop_size)
                    for ev, img in per_ev_images.items()}
    bracket = ExposureBracket(images=tuple(per_ev_crops[ev] for ev in spec.evs),
                              evs=tuple(spec.evs))
    hdr_ball = merge_ldrs(bracket, gamma=spec.gamma)
    env_map = ball_to_envmap(hdr_ball, spec.env_size)

    nfe = counting.counter.snapshot()
    manifest = {
        "version": 1,
        "master_seed": int(master_seed),
        "pipeline": spec.to_config(),
        "schedule": sched.to_config(),
        "seeds": seed_record,
        "nfe": nfe,
        "inputs": {"image_sha256": checksum(image), "depth_sha256": checksum(depth),
                   "painted_depth_sha256": checksum(painted_depth)},
    }
    return EstimateResult(per_ev_images=per_ev_images, per_ev_crops=per_ev_crops,
                          hdr_ball=hdr_ball, env_map=env_map, nfe=nfe,
                          manifest=manifest, debug=debug)


def run_diffusionlight(image, depth, spec, denoiser, rng: SeededRng, sched, **kw):
    return run_estimate(image, depth, replace(spec, kind="diffusionlight"), sched,
                        denoiser, rng.seed, **kw)


def run_turbo_sdedit(image, depth, spec, denoiser, rng: SeededRng, sched, **kw):
    return run_estimate(image, depth, replace(spec, kind="turbo-sdedit"), sched,
                        denoiser, rng.seed, **kw)


def run_turbo_pred(image, depth, spec, denoiser, rng: SeededRng, sched, **kw):
    return run_estimate(image, depth, replace(spec, kind="turbo-pred"), sched,
                        denoiser, rng.seed, **kw)


def run_turbo_swap(image, depth, spec, denoiser, rng: SeededRng, sched, **kw):
    return run_estimate(image, depth, replace(spec, kind="turbo-swap"), sched,
                        denoiser, rng.seed, **kw)


# ---------------------------------------------------------------------------
# NFE bookkeeping

def expected_nfe(spec: PipelineSpec, sched: NoiseSchedule) -> dict:
    """Closed-form denoiser call counts for a run of `spec` over its EVs."""
    n_full = len(sched.steps_from(sched.T))
    m_eta = len(sched.steps_from(sched.nearest_step(spec.inpaint.eta * sched.T)))
    m_thr = len(sched.steps_from(sched.nearest_step(spec.swap_threshold_fraction * sched.T)))
    u = n_full - m_thr  # turbo steps strictly above the threshold step
    cfg = spec.inpaint
    if spec.kind == "diffusionlight":
        per_ev = {LORA_EXPOSURE: cfg.n_balls * n_full
                  + (cfg.k - 1) * cfg.n_balls * m_eta + m_eta}
    elif spec.kind == "turbo-sdedit":
        per_ev = {LORA_TURBO: n_full, LORA_EXPOSURE: m_thr}
    elif spec.kind == "turbo-pred":
        per_ev = {LORA_TURBO: u + (0 if spec.reuse_threshold_eps else 1),
                  LORA_EXPOSURE: m_thr}
    else:  # turbo-swap: boundary is round(frac*T), not the nearest step
        boundary = swap_threshold_timestep(spec.swap_threshold_fraction, sched.T)
        turbo = sum(1 for s in sched.step_indices if s >= boundary)
        per_ev = {LORA_TURBO: turbo, LORA_EXPOSURE: n_full - turbo}
    n_evs = len(spec.evs)
    per_lora = {name: count * n_evs for name, count in sorted(per_ev.items()) if count > 0}
    return {"per_lora": per_lora, "total": sum(per_lora.values())}
