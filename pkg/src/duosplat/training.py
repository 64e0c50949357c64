"""Training loops.

``train_baseline`` optimizes a single cloud with the photometric loss.
``train_segs`` runs the dual-model loop: an ensemble model and an exploring
model each trained photometrically, tied together by a pseudo-view
consistency loss, with the exploring model periodically perturbed where its
pseudo-view renderings have been temporally unstable. The ensemble model is
the one kept for inference.

With the regularization weight at zero, perturbation off and co-pruning
off, the ensemble model's trajectory is bit-identical to the baseline loop
under the same seed (shared code paths, separate RNG streams).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import TrainConfig
from .core import (ConfigError, ContractError, DivergenceError, GaussianCloud,
                   logit)
from .density import (DensityStats, apply_keep, co_prune_masks, density_control,
                      median_nn_spacing, scene_extent)
from .losses import photometric_loss_and_grad, regularization_loss_and_grads
from .optim import OptimizerState, adam_step
from .perturb import NoiseSchedule, omega_at, perturb_model
from .renderer import SH_C0, render, render_backward
from .uncertainty import RenderBuffer, compute_uncertainty, flag_gaussians, push_frame
from .views import sample_pseudo_views

METRICS_COLUMNS = ("iter", "loss_rgb_sigma", "loss_rgb_delta", "loss_reg",
                   "psnr_train", "psnr_heldout", "n_gauss_sigma",
                   "n_gauss_delta", "n_flagged", "omega")

INIT_SCALE_CAP = 0.03  # initial splat scale cap, as a fraction of scene extent


@dataclass
class ModelPair:
    """The ensemble (sigma) and exploring (delta) models with their state."""

    sigma_model: GaussianCloud
    delta_model: GaussianCloud
    sigma_state: OptimizerState
    delta_state: OptimizerState
    sigma_stats: DensityStats = None
    delta_stats: DensityStats = None
    delta_snapshot: GaussianCloud = None  # detached perturbation target, if enabled


@dataclass
class MetricsRow:
    iter: int
    loss_rgb_sigma: float = None
    loss_rgb_delta: float = None
    loss_reg: float = None
    psnr_train: float = None
    psnr_heldout: float = None
    n_gauss_sigma: int = None
    n_gauss_delta: int = None
    n_flagged: int = None
    omega: float = None


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(["" if getattr(row, c) is None else getattr(row, c)
                             for c in METRICS_COLUMNS])


def cloud_from_points(points, colors, max_scale=None) -> GaussianCloud:
    """Deterministic cloud initialization from a colored point set.

    Isotropic scales from mean nearest-neighbor distances (optionally
    capped), identity rotations, opacity 0.1, colors loaded into the SH
    DC term.
    """
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise ConfigError("cannot initialize a model from zero points")
    if n >= 4:
        tree = cKDTree(points)
        dist, _ = tree.query(points, k=4)
        mean_d = dist[:, 1:].mean(axis=1)
    else:
        mean_d = np.full(n, 0.1)
    log_scale = np.repeat(
        np.log(np.clip(mean_d, 1e-4, max_scale))[:, None], 3, axis=1)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = (np.clip(colors, 0.01, 0.99) - 0.5) / SH_C0
    opacity = np.full(n, logit(0.1))
    return GaussianCloud(points.copy(), rot, log_scale, opacity, sh)


def _photo_pass(model, cam, gt, cfg, iteration):
    out = render(model, cam, cfg.background)
    loss, d_img = photometric_loss_and_grad(out.image, gt, cfg.lambda_)
    if not np.isfinite(loss):
        raise DivergenceError(
            f"non-finite photometric loss {loss} at iteration {iteration}")
    grads = render_backward(out, d_img)
    return loss, grads


def _mean_psnr(model, cams, images, background):
    from .harness import psnr
    vals = [psnr(render(model, cam, background).image, img)
            for cam, img in zip(cams, images)]
    return float(np.mean(vals))


def _densify_due(cfg, iteration):
    return (cfg.densify_start <= iteration <= cfg.densify_stop_frac * cfg.total_iters
            and iteration % cfg.densify_interval == 0)


def co_prune(pair: ModelPair, dist_threshold) -> ModelPair:
    """Mutually prune Gaussians lacking a counterpart within dist_threshold."""
    if len(pair.sigma_model) == 0 or len(pair.delta_model) == 0:
        raise ContractError("co-pruning requires two non-empty models")
    if not np.isfinite(dist_threshold):
        return pair
    keep_s, keep_d = co_prune_masks(pair.sigma_model.mu, pair.delta_model.mu,
                                    dist_threshold)
    if not keep_s.all():
        stats = pair.sigma_stats if pair.sigma_stats is not None \
            else DensityStats.zeros(len(pair.sigma_model))
        pair.sigma_model, pair.sigma_state, pair.sigma_stats = apply_keep(
            pair.sigma_model, pair.sigma_state, stats, keep_s)
    if not keep_d.all():
        stats = pair.delta_stats if pair.delta_stats is not None \
            else DensityStats.zeros(len(pair.delta_model))
        pair.delta_model, pair.delta_state, pair.delta_stats = apply_keep(
            pair.delta_model, pair.delta_state, stats, keep_d)
    return pair


def _rng_streams(seed):
    root = np.random.SeedSequence(seed)
    views_ss, perturb_ss = root.spawn(2)
    return np.random.default_rng(views_ss), np.random.default_rng(perturb_ss)


def train_baseline(scene, config: TrainConfig):
    """Single-model photometric training; returns (cloud, metrics rows)."""
    config.validate()
    if len(scene.train_cams) < 1:
        raise ConfigError("baseline training needs at least one view")
    extent = scene_extent(scene.init_points)
    model = cloud_from_points(scene.init_points, scene.init_colors,
                              max_scale=INIT_SCALE_CAP * extent)
    state = OptimizerState.for_cloud(model)
    stats = DensityStats.zeros(len(model))
    cams = scene.train_cams
    gts = scene.train_images
    rows = []
    for t in range(1, config.total_iters + 1):
        ci = (t - 1) % len(cams)
        loss, grads = _photo_pass(model, cams[ci], gts[ci], config, t)
        stats.update(grads, cams[ci].width, cams[ci].height)
        adam_step(model, grads, state, config, t)
        model.step = t
        if _densify_due(config, t):
            model, stats, state = density_control(model, stats, state, config, extent)
        row = MetricsRow(iter=t, loss_rgb_sigma=loss, n_gauss_sigma=len(model))
        if t % config.eval_interval == 0 or t == config.total_iters:
            row.psnr_train = _mean_psnr(model, cams, gts, config.background)
            row.psnr_heldout = _mean_psnr(model, scene.heldout_cams,
                                          scene.heldout_images, config.background)
        rows.append(row)
    return model, rows


def train_segs(scene, config: TrainConfig):
    """Dual-model training; returns (ModelPair, metrics rows).

    Per iteration: photometric pass for both models on one training view,
    pseudo-view consistency pass tying the two (gradients to both unless
    configured otherwise), one optimizer step each. On their cadences:
    buffer pushes of the exploring model's pseudo-view renders,
    uncertainty-driven perturbation, density control, co-pruning.
    """
    config.validate()
    if len(scene.train_cams) < 2:
        raise ConfigError("dual-model training needs at least two views")
    extent = scene_extent(scene.init_points)
    init = cloud_from_points(scene.init_points, scene.init_colors,
                             max_scale=INIT_SCALE_CAP * extent)
    pair = ModelPair(
        sigma_model=init, delta_model=init.copy(),
        sigma_state=OptimizerState.for_cloud(init),
        delta_state=OptimizerState.for_cloud(init),
        sigma_stats=DensityStats.zeros(len(init)),
        delta_stats=DensityStats.zeros(len(init)),
    )
    co_prune_threshold = config.co_prune_threshold
    if config.co_prune and co_prune_threshold <= 0:
        co_prune_threshold = 2.0 * median_nn_spacing(scene.init_points)

    rng_views, rng_perturb = _rng_streams(config.seed)
    pseudo = sample_pseudo_views(scene.train_cams, config.num_buffers, rng_views,
                                 config.beta_min, config.beta_max)
    buffers = [RenderBuffer(view_index=i, capacity=config.buffer_size)
               for i in range(config.num_buffers)]
    sched = NoiseSchedule.from_config(config)
    perturbing = config.perturb_strategy != "none"
    uncertainty_mode = config.perturb_strategy == "uncertainty"

    cams = scene.train_cams
    gts = scene.train_images
    rows = []
    for t in range(1, config.total_iters + 1):
        if (config.resample_interval > 0 and t % config.resample_interval == 0):
            pseudo = sample_pseudo_views(cams, config.num_buffers, rng_views,
                                         config.beta_min, config.beta_max)
            buffers = [RenderBuffer(view_index=i, capacity=config.buffer_size)
                       for i in range(config.num_buffers)]

        ci = (t - 1) % len(cams)
        loss_s, grads_s = _photo_pass(pair.sigma_model, cams[ci], gts[ci], config, t)
        loss_d, grads_d = _photo_pass(pair.delta_model, cams[ci], gts[ci], config, t)

        reg = None
        if config.gamma > 0:
            pv = pseudo.views[int(rng_views.integers(len(pseudo)))]
            out_s = render(pair.sigma_model, pv, config.background)
            target = (pair.delta_snapshot if pair.delta_snapshot is not None
                      else pair.delta_model)
            out_d = render(target, pv, config.background)
            reg, d_s, d_d = regularization_loss_and_grads(
                out_s.image, out_d.image, config.lambda_)
            grads_s.add_(render_backward(out_s, config.gamma * d_s))
            if pair.delta_snapshot is None and not config.stop_grad_delta:
                grads_d.add_(render_backward(out_d, config.gamma * d_d))

        pair.sigma_stats.update(grads_s, cams[ci].width, cams[ci].height)
        pair.delta_stats.update(grads_d, cams[ci].width, cams[ci].height)
        adam_step(pair.sigma_model, grads_s, pair.sigma_state, config, t)
        adam_step(pair.delta_model, grads_d, pair.delta_state, config, t)
        pair.sigma_model.step = t
        pair.delta_model.step = t

        # buffer pushes and perturbation, then density control and co-pruning
        n_flagged = None
        push_due = uncertainty_mode and t % config.buffer_push_interval == 0
        perturb_due = perturbing and t % config.perturb_interval == 0
        delta_renders = None
        if push_due or (perturb_due and uncertainty_mode):
            delta_renders = [render(pair.delta_model, v, config.background)
                             for v in pseudo.views]
        if push_due:
            for buf, out in zip(buffers, delta_renders):
                push_frame(buf, out.image, t)
        if perturb_due:
            flags = None
            if uncertainty_mode:
                maps = [compute_uncertainty(buf, config.kernel_k, config.ratio_r,
                                            config.theta_min) for buf in buffers]
                if all(m is not None for m in maps):
                    flags = flag_gaussians(pair.delta_model, maps, delta_renders,
                                           mode=config.flag_mode)
            elif config.perturb_strategy == "random":
                flags = np.ones(len(pair.delta_model), dtype=bool)
            elif config.perturb_strategy == "gradient":
                flags = pair.delta_stats.average() >= config.densify_grad_threshold
            if flags is not None:
                n_flagged = int(flags.sum())
                perturbed = perturb_model(pair.delta_model, flags, sched, t,
                                          rng_perturb)
                if config.perturb_detached:
                    pair.delta_snapshot = perturbed
                else:
                    pair.delta_model = perturbed

        if _densify_due(config, t):
            pair.sigma_model, pair.sigma_stats, pair.sigma_state = density_control(
                pair.sigma_model, pair.sigma_stats, pair.sigma_state, config, extent)
            pair.delta_model, pair.delta_stats, pair.delta_state = density_control(
                pair.delta_model, pair.delta_stats, pair.delta_state, config, extent)
            if config.co_prune:
                pair = co_prune(pair, co_prune_threshold)

        row = MetricsRow(iter=t, loss_rgb_sigma=loss_s, loss_rgb_delta=loss_d,
                         loss_reg=reg, n_gauss_sigma=len(pair.sigma_model),
                         n_gauss_delta=len(pair.delta_model), n_flagged=n_flagged,
                         omega=omega_at(sched, t) if perturbing else None)
        if t % config.eval_interval == 0 or t == config.total_iters:
            row.psnr_train = _mean_psnr(pair.sigma_model, cams, gts, config.background)
            row.psnr_heldout = _mean_psnr(pair.sigma_model, scene.heldout_cams,
                                          scene.heldout_images, config.background)
        rows.append(row)
    return pair, rows
