"""Command-line surface.

Subcommands: estimate (run a pipeline, write a run directory), replay
(re-execute a manifest bit-exactly), report (aggregate runs into CSV/JSON
plus a score-vs-NFE chart), merge-hdr, tonemap, unwrap, render-spheres,
crop-pano, evaluate.

Exit codes: 0 success, 2 configuration error, 3 denoiser/protocol error,
4 I/O or file-format error. A checksum mismatch detected by `replay
--check` exits 1. The PROBELIGHT_SEED environment variable overrides the
default seed when --seed is not given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import hdr, metrics, pipelines, probe
from .denoisers import (Denoiser, EvScaledOracle, linear_lora_denoiser,
                        oracle_denoiser, seeded_lobe_denoiser)
from .errors import ConfigError, DenoiserError, ImageFormatError, ProtocolError
from .imgio import read_depth, read_image, write_image
from .inpaint import IMPUTE_AS_WRITTEN, IMPUTE_T_PREV_FRESH, InpaintConfig
from .lora import LoraDelta, LoraStack
from .rng import SeededRng
from .schedule import make_schedule, schedule_from_config

MANIFEST_VERSION = 1
RUN_FILES = ("hdr_ball.pfm", "envmap.pfm", "envmap.hdr", "nfe.json", "manifest.json")


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except Exception:
        raise ConfigError(f"bad size {text!r}, expected HxW like 128x256")


def _parse_evs(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"bad EV list {text!r}, expected e.g. 0,-2.5,-5")


def _default_seed() -> int:
    env = os.environ.get("PROBELIGHT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"PROBELIGHT_SEED must be an integer, got {env!r}")
    return 0


# ---------------------------------------------------------------------------
# denoiser specs: toy-oracle:PATH, toy-oracle-ev:PATH, toy-lobe:PATH:SIGMA,
# toy-linear:CONFIG.json, remote:HOST:PORT, remote:stdio:CMD

def build_denoiser(spec: str, sched, lora_scale: float = 0.75) -> Denoiser:
    if spec.startswith("toy-oracle-ev:"):
        return EvScaledOracle(read_image(spec.split(":", 1)[1]), sched)
    if spec.startswith("toy-oracle:"):
        return oracle_denoiser(read_image(spec.split(":", 1)[1]), sched)
    if spec.startswith("toy-lobe:"):
        rest = spec.split(":", 1)[1]
        path, _, sigma = rest.rpartition(":")
        if not path:
            raise ConfigError("toy-lobe spec must be toy-lobe:PATH:SIGMA")
        try:
            sigma_f = float(sigma)
        except ValueError:
            raise ConfigError(f"bad lobe sigma {sigma!r}")
        return seeded_lobe_denoiser(read_image(path), sigma_f, sched)
    if spec.startswith("toy-linear:"):
        return _linear_from_json(spec.split(":", 1)[1])
    if spec.startswith("remote:"):
        from .remote import RemoteDenoiser
        return RemoteDenoiser(spec.split(":", 1)[1], default_lora_scale=lora_scale)
    raise ConfigError(f"unknown denoiser spec {spec!r}")


def _linear_from_json(path: str) -> Denoiser:
    with open(path) as f:
        cfg = json.load(f)
    shape = tuple(int(s) for s in cfg["latent_shape"])
    n = int(np.prod(shape))
    base = cfg.get("base", "identity")
    w = np.eye(n) if base == "identity" else np.zeros((n, n))
    deltas = []
    for d in cfg.get("deltas", ()):
        rank = int(d.get("rank", 1))
        rng = SeededRng(int(d.get("seed", 0)))
        a = rng.gaussian((n, rank)).astype(np.float64) / np.sqrt(n)
        b = rng.gaussian((rank, n)).astype(np.float64) / np.sqrt(n)
        deltas.append(LoraDelta(name=d["name"], A=a, B=b,
                                scale=float(d.get("scale", 0.75))))
    schedule = tuple((int(lo), int(hi), name)
                     for lo, hi, name in cfg.get("swap_schedule", ((1, 1000, None),)))
    stack = LoraStack(w_base=w, deltas=tuple(deltas), swap_schedule=schedule,
                      T=int(cfg.get("T", 1000)))
    return linear_lora_denoiser(stack)


# ---------------------------------------------------------------------------
# estimate / replay

def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _ev_filename(ev: float) -> str:
    return f"ev{ev:g}.png"


def write_run_dir(outdir: str, result: pipelines.EstimateResult, manifest: dict) -> dict:
    os.makedirs(outdir, exist_ok=True)
    artifacts = {}
    for ev, img in result.per_ev_images.items():
        name = _ev_filename(ev)
        write_image(img, os.path.join(outdir, name), "ldr-png")
        artifacts[name] = _file_sha256(os.path.join(outdir, name))
    write_image(result.hdr_ball, os.path.join(outdir, "hdr_ball.pfm"), "pfm")
    write_image(result.env_map, os.path.join(outdir, "envmap.pfm"), "pfm")
    write_image(result.env_map, os.path.join(outdir, "envmap.hdr"), "radiance-hdr")
    for name in ("hdr_ball.pfm", "envmap.pfm", "envmap.hdr"):
        artifacts[name] = _file_sha256(os.path.join(outdir, name))
    _write_json(os.path.join(outdir, "nfe.json"), result.nfe)
    artifacts["nfe.json"] = _file_sha256(os.path.join(outdir, "nfe.json"))
    manifest = dict(manifest)
    manifest["artifacts"] = artifacts
    _write_json(os.path.join(outdir, "manifest.json"), manifest)
    return manifest


def _load_inputs(image_path: str, depth_path: "str | None", flat_depth: bool):
    image = read_image(image_path, "ldr-png" if image_path.endswith(".png") else None)
    if depth_path:
        depth = read_depth(depth_path)
    elif flat_depth:
        depth = np.full((1,) + image.shape[1:], 0.5, dtype=np.float32)
    else:
        raise ConfigError("no depth map: pass --depth PATH or --flat-depth")
    return image, depth


def _run_and_write(args_like: dict, outdir: str) -> pipelines.EstimateResult:
    """Shared core of estimate and replay; args_like mirrors the manifest."""
    spec = pipelines.spec_from_config(args_like["pipeline"])
    sched = schedule_from_config(args_like["schedule"])
    denoiser = build_denoiser(args_like["denoiser"], sched,
                              args_like.get("lora_scale", 0.75))
    image, depth = _load_inputs(args_like["inputs"]["image"],
                                args_like["inputs"].get("depth"),
                                args_like["inputs"].get("flat_depth", False))
    try:
        result = pipelines.run_estimate(image, depth, spec, sched, denoiser,
                                        args_like["master_seed"],
                                        jobs=args_like.get("jobs", 1),
                                        parallel_evs=args_like.get("parallel_evs", False))
    finally:
        denoiser.close()
    manifest = result.manifest
    manifest["command"] = "estimate"
    manifest["denoiser"] = args_like["denoiser"]
    manifest["lora_scale"] = args_like.get("lora_scale", 0.75)
    manifest["inputs"]["image"] = args_like["inputs"]["image"]
    manifest["inputs"]["depth"] = args_like["inputs"].get("depth")
    manifest["inputs"]["flat_depth"] = args_like["inputs"].get("flat_depth", False)
    manifest["inputs"]["image_file_sha256"] = _file_sha256(args_like["inputs"]["image"])
    if args_like["inputs"].get("depth"):
        manifest["inputs"]["depth_file_sha256"] = _file_sha256(args_like["inputs"]["depth"])
    write_run_dir(outdir, result, manifest)
    return result


def cmd_estimate(args) -> int:
    evs = _parse_evs(args.evs)
    inpaint_cfg = InpaintConfig(eta=args.eta, k=args.k, n_balls=args.n, n_steps=args.steps)
    spec = pipelines.PipelineSpec(
        kind=args.pipeline, evs=evs, inpaint=inpaint_cfg,
        swap_threshold_fraction=args.threshold, ball_diameter=args.ball_diameter,
        crop_size=args.crop_size, env_size=_parse_size(args.env_size),
        guidance_scale=args.guidance,
        reuse_threshold_eps=args.reuse_threshold_eps, impute_level=args.impute_level)
    sched = make_schedule(args.schedule, T=args.t_max, n_steps=args.steps)
    seed = args.seed if args.seed is not None else _default_seed()
    args_like = {
        "pipeline": spec.to_config(),
        "schedule": sched.to_config(),
        "denoiser": args.denoiser,
        "lora_scale": args.lora_scale,
        "master_seed": seed,
        "jobs": args.jobs,
        "parallel_evs": args.parallel_evs,
        "inputs": {"image": args.image, "depth": args.depth, "flat_depth": args.flat_depth},
    }
    result = _run_and_write(args_like, args.out)
    print(f"wrote {args.out}: NFE total {result.nfe['total']} "
          f"({', '.join(f'{k}={v}' for k, v in result.nfe['per_lora'].items())})")
    return 0


def cmd_replay(args) -> int:
    with open(args.manifest) as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ConfigError(f"manifest version {manifest.get('version')!r} not supported")
    image_path = manifest["inputs"]["image"]
    if not os.path.exists(image_path):
        raise FileNotFoundError(f"manifest references missing input {image_path}")
    depth_path = manifest["inputs"].get("depth")
    if depth_path and not os.path.exists(depth_path):
        raise FileNotFoundError(f"manifest references missing input {depth_path}")
    args_like = {
        "pipeline": manifest["pipeline"],
        "schedule": manifest["schedule"],
        "denoiser": manifest["denoiser"],
        "lora_scale": manifest.get("lora_scale", 0.75),
        "master_seed": manifest["master_seed"],
        "jobs": args.jobs,
        "inputs": manifest["inputs"],
    }
    _run_and_write(args_like, args.out)
    if args.check:
        mismatches = []
        for name, digest in manifest.get("artifacts", {}).items():
            new = _file_sha256(os.path.join(args.out, name))
            if new != digest:
                mismatches.append(name)
        if mismatches:
            print(f"checksum mismatch vs manifest: {', '.join(sorted(mismatches))}",
                  file=sys.stderr)
            return 1
        print("all artifact checksums match the manifest")
    return 0


# ---------------------------------------------------------------------------
# report

def _bar_chart_svg(rows: list[dict], score_key: str) -> str:
    width, height, pad = 480, 280, 48
    n = max(len(rows), 1)
    scores = [r.get(score_key) or 0.0 for r in rows]
    top = max(scores + [1e-9])
    bar_w = (width - 2 * pad) / n
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width/2:.0f}" y="20" text-anchor="middle" font-size="13">'
             f'{score_key} vs NFE</text>']
    for i, row in enumerate(rows):
        h = (scores[i] / top) * (height - 2 * pad)
        x = pad + i * bar_w
        y = height - pad - h
        parts.append(f'<rect x="{x + 4:.1f}" y="{y:.1f}" width="{bar_w - 8:.1f}" '
                     f'height="{h:.1f}" fill="#4477aa"/>')
        parts.append(f'<text x="{x + bar_w/2:.1f}" y="{height - pad + 14}" '
                     f'text-anchor="middle" font-size="10">{row["name"]}</text>')
        parts.append(f'<text x="{x + bar_w/2:.1f}" y="{height - pad + 27}" '
                     f'text-anchor="middle" font-size="10">NFE {row["nfe_total"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    rows = []
    for run_dir in args.runs:
        nfe_path = os.path.join(run_dir, "nfe.json")
        try:
            with open(nfe_path) as f:
                nfe = json.load(f)
        except FileNotFoundError:
            raise FileNotFoundError(f"missing {nfe_path}")
        except json.JSONDecodeError as e:
            raise ImageFormatError(f"corrupt report input {nfe_path}: {e}")
        row = {"name": os.path.basename(os.path.normpath(run_dir)),
               "nfe_total": int(nfe.get("total", 0))}
        manifest_path = os.path.join(run_dir, "manifest.json")
        if os.path.exists(manifest_path):
            with open(manifest_path) as f:
                row["pipeline"] = json.load(f).get("pipeline", {}).get("kind")
        score_path = os.path.join(run_dir, "report.json")
        if os.path.exists(score_path):
            try:
                with open(score_path) as f:
                    scores = json.load(f)
            except json.JSONDecodeError as e:
                raise ImageFormatError(f"corrupt report input {score_path}: {e}")
            agg = scores.get("aggregates", {})
            if agg:
                first = agg[sorted(agg)[0]]
                for key in ("si_rmse", "angular_deg", "norm_rmse"):
                    row[key] = first.get(key)
        rows.append(row)
    min_nfe = min(r["nfe_total"] for r in rows) or 1
    for r in rows:
        r["nfe_ratio"] = r["nfe_total"] / min_nfe
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "summary.json"), {"runs": rows})
    import csv as _csv
    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as f:
        names = ["name", "pipeline", "nfe_total", "nfe_ratio",
                 "si_rmse", "angular_deg", "norm_rmse"]
        writer = _csv.DictWriter(f, fieldnames=names, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(args.out, "tradeoff.svg"), "w") as f:
        f.write(_bar_chart_svg(rows, "si_rmse"))
    print(f"report over {len(rows)} runs written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# geometry / HDR / metric commands

def cmd_merge_hdr(args) -> int:
    images, evs = [], []
    for ev, path in ((0.0, args.ev0), (-2.5, args.ev_m25), (-5.0, args.ev_m5)):
        if path:
            images.append(read_image(path))
            evs.append(ev)
    if not images:
        raise ConfigError("merge-hdr needs at least --ev0")
    bracket = hdr.ExposureBracket(images=tuple(images), evs=tuple(evs))
    write_image(hdr.merge_ldrs(bracket, gamma=args.gamma), args.out)
    return 0


def cmd_tonemap(args) -> int:
    out = hdr.tonemap(read_image(args.input), ev=args.ev, gamma=args.gamma,
                      percentile=args.percentile, target=args.target)
    write_image(out, args.out, "ldr-png")
    return 0


def cmd_unwrap(args) -> int:
    ball = read_image(args.ball)
    env = probe.ball_to_envmap(ball, _parse_size(args.size))
    write_image(env, args.out)
    return 0


def cmd_render_spheres(args) -> int:
    env = probe.require_envmap(read_image(args.env))
    mats = {"mirror": probe.SILVER_MIRROR, "matte": probe.SILVER_MATTE,
            "diffuse": probe.GRAY_DIFFUSE}
    render = probe.render_sphere(env, mats[args.material], args.size)
    write_image(render, args.out)
    return 0


def cmd_crop_pano(args) -> int:
    env = probe.require_envmap(read_image(args.env))
    spec = probe.CropSpec(fov_v_deg=args.fov, azimuth_deg=args.az,
                          elevation_deg=args.el, out_size=_parse_size(args.out_size))
    crop = probe.crop_pano(env, spec)
    if args.output.endswith(".png"):
        crop = hdr.tonemap(crop)
    write_image(crop, args.output)
    return 0


def cmd_evaluate(args) -> int:
    report = metrics.evaluate(args.pred, args.gt, args.protocol, args.out,
                              out_csv=args.csv, sphere_size=args.sphere_size,
                              rotate_deg=args.rotate_deg, mask_black=args.mask_black)
    for material, scores in report.aggregates.items():
        line = ", ".join(f"{k}={v:.5g}" for k, v in scores.items())
        print(f"{material}: {line}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probelight",
                                description="Chrome-ball light probe estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run an estimation pipeline")
    est.add_argument("image", help="input LDR image (PNG)")
    est.add_argument("--depth", default=None, help="depth map (PFM or PNG)")
    est.add_argument("--flat-depth", action="store_true",
                     help="use a constant depth map instead of --depth")
    est.add_argument("--pipeline", required=True, choices=pipelines.PIPELINE_KINDS)
    est.add_argument("--denoiser", required=True,
                     help="toy-oracle:PATH | toy-oracle-ev:PATH | toy-lobe:PATH:SIGMA | "
                          "toy-linear:CONFIG.json | remote:HOST:PORT | remote:stdio:CMD")
    est.add_argument("--out", required=True, help="run directory to create")
    est.add_argument("--seed", type=int, default=None,
                     help="master seed (default: 0, or PROBELIGHT_SEED if set)")
    est.add_argument("--evs", default="0,-2.5,-5",
                     help="exposure bracket (default: %(default)s)")
    est.add_argument("--n", type=int, default=30,
                     help="balls per median round (default: %(default)s)")
    est.add_argument("--k", type=int, default=2,
                     help="median iterations (default: %(default)s)")
    est.add_argument("--eta", type=float, default=0.8,
                     help="SDEdit strength (default: %(default)s)")
    est.add_argument("--steps", type=int, default=30,
                     help="sampling steps (default: %(default)s)")
    est.add_argument("--threshold", type=float, default=0.8,
                     help="turbo/exposure switch fraction of T (default: %(default)s)")
    est.add_argument("--guidance", type=float, default=5.0,
                     help="guidance scale passed to the denoiser (default: %(default)s)")
    est.add_argument("--lora-scale", type=float, default=0.75,
                     help="adapter scale passed to remote denoisers (default: %(default)s)")
    est.add_argument("--ball-diameter", type=int, default=256,
                     help="inpainted ball diameter in pixels (default: %(default)s)")
    est.add_argument("--crop-size", type=int, default=256,
                     help="ball crop resolution for merging (default: %(default)s)")
    est.add_argument("--env-size", default="128x256",
                     help="environment map size HxW (default: %(default)s)")
    est.add_argument("--schedule", default="scaled-linear",
                     choices=("scaled-linear", "cosine"),
                     help="noise schedule kind (default: %(default)s)")
    est.add_argument("--t-max", type=int, default=1000,
                     help="maximum diffusion timestep T (default: %(default)s)")
    est.add_argument("--impute-level", default=IMPUTE_AS_WRITTEN,
                     choices=(IMPUTE_AS_WRITTEN, IMPUTE_T_PREV_FRESH),
                     help="background imputation variant (default: %(default)s)")
    est.add_argument("--reuse-threshold-eps", action=argparse.BooleanOptionalAction,
                     default=True,
                     help="turbo-pred reuses the last noise prediction at the threshold")
    est.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                     help="worker threads for per-round ball generation "
                          "(default: logical cores)")
    est.add_argument("--parallel-evs", action="store_true",
                     help="run the EV bracket concurrently")
    est.set_defaults(func=cmd_estimate)

    rep = sub.add_parser("replay", help="re-run a recorded manifest bit-exactly")
    rep.add_argument("manifest")
    rep.add_argument("--out", required=True)
    rep.add_argument("--check", action="store_true",
                     help="compare artifact checksums against the manifest")
    rep.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    rep.set_defaults(func=cmd_replay)

    rpt = sub.add_parser("report", help="aggregate run directories")
    rpt.add_argument("runs", nargs="+", help="run directories")
    rpt.add_argument("-o", "--out", required=True, help="output directory")
    rpt.set_defaults(func=cmd_report)

    mh = sub.add_parser("merge-hdr", help="merge an LDR exposure bracket")
    mh.add_argument("--ev0", required=True, help="EV 0 image")
    mh.add_argument("--ev-2.5", dest="ev_m25", default=None, help="EV -2.5 image")
    mh.add_argument("--ev-5", dest="ev_m5", default=None, help="EV -5 image")
    mh.add_argument("--gamma", type=float, default=2.4,
                    help="display gamma (default: %(default)s)")
    mh.add_argument("-o", "--out", required=True, help="output HDR (PFM or .hdr)")
    mh.set_defaults(func=cmd_merge_hdr)

    tm = sub.add_parser("tonemap", help="percentile tone map an HDR image")
    tm.add_argument("input")
    tm.add_argument("-o", "--out", required=True)
    tm.add_argument("--ev", type=float, default=0.0, help="(default: %(default)s)")
    tm.add_argument("--gamma", type=float, default=2.4, help="(default: %(default)s)")
    tm.add_argument("--percentile", type=float, default=99.0,
                    help="(default: %(default)s)")
    tm.add_argument("--target", type=float, default=0.9, help="(default: %(default)s)")
    tm.set_defaults(func=cmd_tonemap)

    uw = sub.add_parser("unwrap", help="mirror ball to equirectangular map")
    uw.add_argument("ball")
    uw.add_argument("-o", "--out", required=True)
    uw.add_argument("--size", default="128x256",
                    help="environment map size HxW (default: %(default)s)")
    uw.set_defaults(func=cmd_unwrap)

    rs = sub.add_parser("render-spheres", help="render a probe sphere")
    rs.add_argument("env")
    rs.add_argument("--material", required=True, choices=("mirror", "matte", "diffuse"))
    rs.add_argument("--size", type=int, default=64,
                    help="render resolution (default: %(default)s)")
    rs.add_argument("-o", "--out", required=True)
    rs.set_defaults(func=cmd_render_spheres)

    cp = sub.add_parser("crop-pano", help="perspective crop of an equirect map")
    cp.add_argument("env")
    cp.add_argument("--fov", type=float, required=True, help="vertical FOV in degrees")
    cp.add_argument("--az", type=float, default=0.0, help="(default: %(default)s)")
    cp.add_argument("--el", type=float, default=0.0, help="(default: %(default)s)")
    cp.add_argument("--out", dest="out_size", default="192x256",
                    help="crop size HxW (default: %(default)s)")
    cp.add_argument("-o", "--output", required=True, help="output image path")
    cp.set_defaults(func=cmd_crop_pano)

    ev = sub.add_parser("evaluate", help="score predicted env maps against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--protocol", required=True, choices=metrics.PROTOCOLS)
    ev.add_argument("--out", required=True, help="report JSON path")
    ev.add_argument("--csv", default=None, help="optional per-image CSV path")
    ev.add_argument("--sphere-size", type=int, default=64,
                    help="sphere render resolution (default: %(default)s)")
    ev.add_argument("--rotate-deg", type=float, default=0.0,
                    help="rotate predictions about the azimuth before scoring")
    ev.add_argument("--mask-black", action="store_true",
                    help="exclude pixels where the ground-truth render is black")
    ev.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ProtocolError, DenoiserError) as e:
        print(f"denoiser error: {e}", file=sys.stderr)
        return 3
    except (ImageFormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
