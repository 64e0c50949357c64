"""Evaluation metrics, held-out reports, and the ablation runner."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core import ConfigError, ContractError
from .losses import ssim
from .renderer import render

PSNR_CAP = 99.0
_PSNR_MSE_FLOOR = 1e-10


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def config_hash(cfg: TrainConfig) -> str:
    payload = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


@dataclass
class EvalReport:
    view_psnr: list
    view_ssim: list
    mean_psnr: float
    mean_ssim: float
    seed: int = None
    config_hash: str = None


def eval_heldout(model, scene, background=(0.0, 0.0, 0.0),
                 seed=None, cfg_hash=None) -> EvalReport:
    """Render every held-out camera and report per-view and mean metrics."""
    view_psnr = []
    view_ssim = []
    for cam, gt in zip(scene.heldout_cams, scene.heldout_images):
        img = render(model, cam, background).image
        view_psnr.append(psnr(img, gt))
        view_ssim.append(ssim(img, gt))
    return EvalReport(view_psnr=view_psnr, view_ssim=view_ssim,
                      mean_psnr=float(np.mean(view_psnr)),
                      mean_ssim=float(np.mean(view_ssim)),
                      seed=seed, config_hash=cfg_hash)


def write_eval_csv(report: EvalReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "psnr", "ssim"])
        for i, (p, s) in enumerate(zip(report.view_psnr, report.view_ssim)):
            writer.writerow([i, p, s])
        writer.writerow(["mean", report.mean_psnr, report.mean_ssim])


ABLATION_AXES = {
    "interval": [("interval_100", {"perturb_interval": 100}),
                 ("interval_500", {"perturb_interval": 500}),
                 ("interval_900", {"perturb_interval": 900})],
    "omega": [("omega_0.01", {"omega_start": 0.01, "omega_end": 0.01}),
              ("omega_0.08", {"omega_start": 0.08, "omega_end": 0.08}),
              ("omega_0.30", {"omega_start": 0.30, "omega_end": 0.30}),
              ("omega_decay_0.08_0.02", {"omega_start": 0.08, "omega_end": 0.02})],
    "strategy": [("none", {"perturb_strategy": "none"}),
                 ("random", {"perturb_strategy": "random"}),
                 ("gradient", {"perturb_strategy": "gradient"}),
                 ("uncertainty", {"perturb_strategy": "uncertainty"})],
}


def run_ablation(scene, base_config: TrainConfig, axis):
    """Train the dual-model loop once per axis setting; returns labeled reports."""
    from .training import train_segs
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; "
                          f"choose from {sorted(ABLATION_AXES)}")
    results = []
    for label, overrides in ABLATION_AXES[axis]:
        cfg = base_config.replace(**overrides)
        pair, _ = train_segs(scene, cfg)
        report = eval_heldout(pair.sigma_model, scene, cfg.background,
                              seed=cfg.seed, cfg_hash=config_hash(cfg))
        results.append((label, report))
    return results


def write_ablation_csv(results, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "mean_psnr", "mean_ssim"])
        for label, report in results:
            writer.writerow([label, report.mean_psnr, report.mean_ssim])
