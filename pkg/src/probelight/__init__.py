"""probelight: chrome-ball light probe estimation at desk scale.

Inpainting pipelines with iterative median aggregation and adapter
swapping, exposure-bracketed HDR merging, mirror-ball geometry, probe
renders and scale-invariant metrics, all against a pluggable denoiser
interface (analytic toys or a remote model over a JSON wire protocol).
"""

from .denoisers import (Conditioning, CountingDenoiser, Denoiser, DenoiserCall,
                        NfeCounter, interp_embedding, linear_lora_denoiser,
                        masked_noise_loss, oracle_denoiser, seeded_lobe_denoiser)
from .hdr import ExposureBracket, luminance, merge_ldrs, scale_exposure, tonemap
from .imgio import read_depth, read_image, write_image
from .inpaint import (BallPlacement, InpaintConfig, inpaint, iterative_inpaint,
                      iterative_inpaint_report, make_ball_mask, paint_depth_circle,
                      pixelwise_median, sdedit_inpaint)
from .lora import LoraDelta, LoraStack, active_lora_name, compose_lora
from .metrics import angular_error_deg, evaluate, normalized_rmse, si_rmse
from .pipelines import (EstimateResult, PipelineSpec, expected_nfe, run_diffusionlight,
                        run_estimate, run_turbo_pred, run_turbo_sdedit, run_turbo_swap)
from .probe import (CropSpec, SphereMaterial, ball_to_envmap, crop_pano,
                    envmap_to_ball, render_sphere, render_sphere_array)
from .remote import RemoteDenoiser
from .rng import SeededRng, derive_seed, gaussian_like
from .schedule import NoiseSchedule, add_noise, ddim_update, make_schedule, predict_x0

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
