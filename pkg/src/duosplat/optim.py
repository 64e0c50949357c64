"""Adaptive-moment optimizer with per-group step sizes.

One state object per model; moment arrays mirror the cloud's parameter
shapes and are resized in lockstep by density control. The position step
size decays exponentially over training; quaternions are renormalized
after any step that moved them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GaussianCloud

GROUPS = ("mu", "rot", "log_scale", "opacity_logit", "sh")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)   # first moments, per group
    v: dict = field(default_factory=dict)   # second moments, per group
    step: int = 0
    skipped: int = 0                         # non-finite gradient entries skipped

    @classmethod
    def for_cloud(cls, cloud: GaussianCloud):
        state = cls()
        for g in GROUPS:
            arr = getattr(cloud, g)
            state.m[g] = np.zeros_like(arr)
            state.v[g] = np.zeros_like(arr)
        return state

    def select_rows(self, keep, n_new):
        """Keep the given rows then append `n_new` zero rows (density events)."""
        for g in GROUPS:
            kept_m = self.m[g][keep]
            kept_v = self.v[g][keep]
            pad = (n_new,) + kept_m.shape[1:]
            self.m[g] = np.concatenate([kept_m, np.zeros(pad)], axis=0)
            self.v[g] = np.concatenate([kept_v, np.zeros(pad)], axis=0)


def position_lr(cfg, iteration) -> float:
    """Exponential decay from lr_mu to lr_mu_final over total_iters."""
    if cfg.lr_mu_final <= 0 or cfg.lr_mu_final >= cfg.lr_mu:
        return cfg.lr_mu
    frac = min(max(iteration / cfg.total_iters, 0.0), 1.0)
    return float(cfg.lr_mu * (cfg.lr_mu_final / cfg.lr_mu) ** frac)


def adam_step(cloud: GaussianCloud, grads, state: OptimizerState, cfg, iteration):
    """One in-place update of all parameter groups.

    Entries with non-finite gradients are skipped (moments and parameters
    untouched) and counted on the state.
    """
    state.step += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    lrs = {"mu": position_lr(cfg, iteration), "rot": cfg.lr_rot,
           "log_scale": cfg.lr_scale, "opacity_logit": cfg.lr_opacity,
           "sh": cfg.lr_sh}
    for g in GROUPS:
        grad = getattr(grads, g)
        param = getattr(cloud, g)
        finite = np.isfinite(grad)
        n_bad = int(grad.size - finite.sum())
        if n_bad:
            state.skipped += n_bad
            grad = np.where(finite, grad, 0.0)
        m = state.m[g]
        v = state.v[g]
        new_m = b1 * m + (1.0 - b1) * grad
        new_v = b2 * v + (1.0 - b2) * grad * grad
        state.m[g] = np.where(finite, new_m, m)
        state.v[g] = np.where(finite, new_v, v)
        update = lrs[g] * (state.m[g] / bc1) / (np.sqrt(state.v[g] / bc2) + eps)
        param -= np.where(finite, update, 0.0)
    # renormalize quaternions only when they actually drifted, so a zero
    # gradient leaves the cloud bit-identical
    norms = np.linalg.norm(cloud.rot, axis=1)
    drift = np.abs(norms - 1.0) > 1e-12
    if np.any(drift):
        cloud.rot[drift] /= norms[drift, None]
