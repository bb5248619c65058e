"""Scale-invariant evaluation metrics and the directory evaluation harness.

All three metrics tolerate the arbitrary global intensity scale of predicted
HDR maps: si-RMSE fits one scalar jointly over all pixels and channels
before the RMSE; the angular error compares per-pixel RGB directions only;
normalized RMSE maps each image's 0.1st/99.9th percentiles to 0/1 (no
clamping) before the RMSE. Reductions are float64.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import probe
from .imgio import read_image
from .tensor import Tensor, require_finite, require_same_shape

PROTOCOLS = ("three-spheres", "sphere-array")

THREE_SPHERES = (
    ("mirror", probe.SILVER_MIRROR),
    ("matte", probe.SILVER_MATTE),
    ("diffuse", probe.GRAY_DIFFUSE),
)


def _pair(pred: Tensor, gt: Tensor) -> tuple[np.ndarray, np.ndarray]:
    require_same_shape(pred, gt)
    require_finite(pred, "pred")
    require_finite(gt, "gt")
    return pred.astype(np.float64), gt.astype(np.float64)


def si_rmse(pred: Tensor, gt: Tensor) -> float:
    """RMSE after the single least-squares scale s* = <p,g>/<p,p>."""
    p, g = _pair(pred, gt)
    if not np.any(g):
        raise ValueError("ground truth is all-zero")
    pp = float(np.sum(p * p))
    s = float(np.sum(p * g)) / pp if pp > 0.0 else 0.0
    d = s * p - g
    return float(np.sqrt(np.mean(d * d)))


def angular_error_deg(pred: Tensor, gt: Tensor) -> float:
    """Mean per-pixel angle between RGB vectors, in degrees.

    Pixels where both vectors vanish contribute 0; exactly one vanishing
    contributes 90 (a defined hue against an undefined one).
    """
    p, g = _pair(pred, gt)
    if p.shape[0] != 3:
        raise ValueError("angular error expects 3-channel images")
    dot = np.sum(p * g, axis=0)
    np_ = np.sqrt(np.sum(p * p, axis=0))
    ng = np.sqrt(np.sum(g * g, axis=0))
    both = (np_ > 0) & (ng > 0)
    neither = (np_ == 0) & (ng == 0)
    ang = np.full(dot.shape, 90.0)
    cosv = np.clip(np.divide(dot, np_ * ng, out=np.zeros_like(dot), where=both), -1.0, 1.0)
    ang[both] = np.degrees(np.arccos(cosv[both]))
    ang[neither] = 0.0
    return float(np.mean(ang))


def normalized_rmse(pred: Tensor, gt: Tensor) -> float:
    """RMSE after mapping each image's 0.1st/99.9th percentiles to 0/1."""
    p, g = _pair(pred, gt)

    def norm(x):
        lo, hi = np.percentile(x, [0.1, 99.9])
        if hi <= lo:
            raise ValueError("degenerate percentiles (constant image)")
        return (x - lo) / (hi - lo)

    d = norm(p) - norm(g)
    return float(np.sqrt(np.mean(d * d)))


METRICS = (("si_rmse", si_rmse), ("angular_deg", angular_error_deg),
           ("norm_rmse", normalized_rmse))


@dataclass
class EvalReport:
    protocol: str
    rows: list[dict] = field(default_factory=list)  # stem, material, scores
    aggregates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def aggregate(self) -> None:
        groups: dict[str, list[dict]] = {}
        for row in self.rows:
            groups.setdefault(row["material"], []).append(row)
        self.aggregates = {
            material: {name: float(np.mean([r[name] for r in rows]))
                       for name, _ in METRICS}
            for material, rows in sorted(groups.items())
        }

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "config": self.config,
                "count": len(self.rows), "aggregates": self.aggregates,
                "rows": self.rows}


def _env_stems(directory: str) -> dict[str, str]:
    out = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in (".pfm", ".hdr"):
            out.setdefault(stem, os.path.join(directory, name))
    return out


def _rotate_env(env: Tensor, rotate_deg: float) -> Tensor:
    if rotate_deg == 0.0:
        return env
    shift = int(round(rotate_deg / 360.0 * env.shape[2]))
    return np.roll(env, shift, axis=2)


def _masked(pred: Tensor, gt: Tensor) -> tuple[Tensor, Tensor]:
    keep = np.any(gt > 0, axis=0)
    if not np.any(keep):
        return pred, gt
    return pred[:, keep][:, None, :], gt[:, keep][:, None, :]


def score_pair(pred_env: Tensor, gt_env: Tensor, protocol: str, *,
               sphere_size: int = 64, array_grid: tuple[int, int] = (3, 8),
               array_size: tuple[int, int] = (120, 320),
               mask_black: bool = False) -> list[dict]:
    """Render both maps per the protocol and score every material."""
    if protocol == "three-spheres":
        renders = [(label, probe.render_sphere(pred_env, mat, sphere_size),
                    probe.render_sphere(gt_env, mat, sphere_size))
                   for label, mat in THREE_SPHERES]
    elif protocol == "sphere-array":
        renders = [("array", probe.render_sphere_array(pred_env, array_grid, array_size),
                    probe.render_sphere_array(gt_env, array_grid, array_size))]
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    rows = []
    for label, pr, gr in renders:
        if mask_black:
            pr, gr = _masked(pr, gr)
        rows.append({"material": label,
                     **{name: fn(pr, gr) for name, fn in METRICS}})
    return rows


def evaluate(pred_dir: str, gt_dir: str, protocol: str, out_json: str, *,
             out_csv: "str | None" = None, sphere_size: int = 64,
             array_grid: tuple[int, int] = (3, 8),
             array_size: tuple[int, int] = (120, 320),
             rotate_deg: float = 0.0, mask_black: bool = False) -> EvalReport:
    """Score matching env maps (by stem) from two directories."""
    preds = _env_stems(pred_dir)
    gts = _env_stems(gt_dir)
    missing = sorted(set(gts) ^ set(preds))
    if missing:
        raise FileNotFoundError(f"unpaired environment maps: {', '.join(missing)}")
    if not preds:
        raise FileNotFoundError(f"no environment maps found in {pred_dir}")
    report = EvalReport(protocol=protocol, config={
        "pred_dir": pred_dir, "gt_dir": gt_dir, "sphere_size": sphere_size,
        "array_grid": list(array_grid), "array_size": list(array_size),
        "rotate_deg": rotate_deg, "mask_black": mask_black,
    })
    for stem in sorted(preds):
        pred_env = _rotate_env(probe.require_envmap(read_image(preds[stem])), rotate_deg)
        gt_env = probe.require_envmap(read_image(gts[stem]))
        for row in score_pair(pred_env, gt_env, protocol, sphere_size=sphere_size,
                              array_grid=array_grid, array_size=array_size,
                              mask_black=mask_black):
            report.rows.append({"stem": stem, **row})
    report.aggregate()
    with open(out_json, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    if out_csv:
        with open(out_csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["stem", "material"] + [name for name, _ in METRICS])
            for row in report.rows:
                writer.writerow([row["stem"], row["material"]] +
                                [f"{row[name]:.9g}" for name, _ in METRICS])
    return report
