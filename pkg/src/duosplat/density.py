"""Density control: clone / split / prune driven by accumulated screen-space
positional gradients, plus the cross-model pruning mask used by the
dual-model trainer.

Gradient statistics are pixel-space positional-gradient magnitudes scaled
by half the image size, averaged over the iterations a Gaussian was
visible, mirroring the usual splatting densification signal.
All decisions are deterministic: clones shift against the accumulated
world-space position gradient, splits place two children along the
principal covariance axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import GaussianCloud, quat_to_rotmat, sigmoid
from .optim import OptimizerState


@dataclass
class DensityStats:
    grad_accum: np.ndarray    # (N,) accumulated NDC positional-gradient norms
    mu_grad_accum: np.ndarray  # (N, 3) accumulated world-space position grads
    denom: np.ndarray          # (N,) visibility counts

    @classmethod
    def zeros(cls, n):
        return cls(grad_accum=np.zeros(n), mu_grad_accum=np.zeros((n, 3)),
                   denom=np.zeros(n, dtype=np.int64))

    def update(self, grads, width, height):
        # pixel-space gradients scaled by half the image size, the customary
        # densification unit for mean-reduced photometric losses
        scale = 0.5 * max(width, height)
        norm = np.hypot(grads.viewspace[:, 0], grads.viewspace[:, 1]) * scale
        vis = grads.visible
        self.grad_accum[vis] += norm[vis]
        self.mu_grad_accum[vis] += grads.mu[vis]
        self.denom[vis] += 1

    def average(self):
        return self.grad_accum / np.maximum(self.denom, 1)


def scene_extent(points) -> float:
    """Scene size proxy: the largest axis span of the given points."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return 1.0
    return float(max(np.ptp(points, axis=0).max(), 1e-6))


def density_control(cloud: GaussianCloud, stats: DensityStats,
                    state: OptimizerState, cfg, extent):
    """One clone/split/prune event.

    Returns (cloud, stats, state) with the optimizer moments row-aligned to
    the new population and statistics reset. If everything would be pruned
    the highest-opacity Gaussian survives.
    """
    n = len(cloud)
    avg = stats.average()
    opacity = sigmoid(cloud.opacity_logit)
    size = np.exp(cloud.log_scale).max(axis=1)

    prune = opacity < cfg.prune_opacity
    if prune.all():
        prune[int(np.argmax(opacity))] = False
    eligible = ~prune
    high = avg >= cfg.densify_grad_threshold
    small = size <= cfg.densify_percent_dense * extent
    clone_mask = eligible & high & small
    split_mask = eligible & high & ~small
    if n + clone_mask.sum() + split_mask.sum() > cfg.max_gaussians:
        clone_mask[:] = False
        split_mask[:] = False
    survivors = eligible & ~split_mask

    pieces_mu = [cloud.mu[survivors]]
    pieces_rot = [cloud.rot[survivors]]
    pieces_ls = [cloud.log_scale[survivors]]
    pieces_op = [cloud.opacity_logit[survivors]]
    pieces_sh = [cloud.sh[survivors]]

    if clone_mask.any():
        idx = np.nonzero(clone_mask)[0]
        g = stats.mu_grad_accum[idx]
        g_norm = np.linalg.norm(g, axis=1, keepdims=True)
        direction = np.where(g_norm > 0, g / np.where(g_norm > 0, g_norm, 1.0), 0.0)
        shift = -direction * (0.5 * size[idx][:, None])
        pieces_mu.append(cloud.mu[idx] + shift)
        pieces_rot.append(cloud.rot[idx])
        pieces_ls.append(cloud.log_scale[idx])
        pieces_op.append(cloud.opacity_logit[idx])
        pieces_sh.append(cloud.sh[idx])

    if split_mask.any():
        idx = np.nonzero(split_mask)[0]
        R = quat_to_rotmat(cloud.rot[idx])
        scales = np.exp(cloud.log_scale[idx])
        k_max = np.argmax(scales, axis=1)
        axis = R[np.arange(idx.size), :, k_max]          # principal direction
        offset = axis * (0.5 * scales[np.arange(idx.size), k_max])[:, None]
        child_ls = cloud.log_scale[idx] - np.log(cfg.split_factor)
        for sign in (1.0, -1.0):
            pieces_mu.append(cloud.mu[idx] + sign * offset)
            pieces_rot.append(cloud.rot[idx])
            pieces_ls.append(child_ls)
            pieces_op.append(cloud.opacity_logit[idx])
            pieces_sh.append(cloud.sh[idx])

    new_cloud = GaussianCloud(
        mu=np.concatenate(pieces_mu), rot=np.concatenate(pieces_rot),
        log_scale=np.concatenate(pieces_ls),
        opacity_logit=np.concatenate(pieces_op),
        sh=np.concatenate(pieces_sh), step=cloud.step)
    n_new = len(new_cloud) - int(survivors.sum())
    state.select_rows(survivors, n_new)
    return new_cloud, DensityStats.zeros(len(new_cloud)), state


def co_prune_masks(mu_a, mu_b, threshold):
    """Keep masks for two point sets under the mutual nearest-neighbor test.

    A point is dropped when the other set has no point within `threshold`.
    Each side always keeps at least one point.
    """
    tree_a = cKDTree(mu_a)
    tree_b = cKDTree(mu_b)
    dist_a, _ = tree_b.query(mu_a)
    dist_b, _ = tree_a.query(mu_b)
    keep_a = dist_a <= threshold
    keep_b = dist_b <= threshold
    if not keep_a.any():
        keep_a[int(np.argmin(dist_a))] = True
    if not keep_b.any():
        keep_b[int(np.argmin(dist_b))] = True
    return keep_a, keep_b


def median_nn_spacing(points) -> float:
    """Median distance to the nearest neighbor; the co-prune auto threshold base."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 1.0
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=2)
    return float(np.median(dist[:, 1]))


def apply_keep(cloud: GaussianCloud, state: OptimizerState,
               stats: DensityStats, keep):
    cloud2 = GaussianCloud(cloud.mu[keep], cloud.rot[keep],
                           cloud.log_scale[keep], cloud.opacity_logit[keep],
                           cloud.sh[keep], step=cloud.step)
    state.select_rows(keep, 0)
    stats2 = DensityStats(grad_accum=stats.grad_accum[keep],
                          mu_grad_accum=stats.mu_grad_accum[keep],
                          denom=stats.denom[keep])
    return cloud2, state, stats2
