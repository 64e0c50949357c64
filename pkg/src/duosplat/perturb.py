"""Noise schedules and flagged-Gaussian perturbation.

Flagged Gaussians receive zero-mean isotropic noise on positions,
log-scales, opacity logits, and the continuous 6D rotation representation
(first two rotation-matrix columns, inverted by Gram-Schmidt plus cross
product). The per-group noise scale is omega(t) times the mean L1 norm of
that group's current values over all Gaussians. SH colors are never
perturbed.

Draw layout is fixed so tests can regenerate it: per event, one standard
normal block per group, in the order positions (N, 3), rotations (N, 6),
scales (N, 3), opacities (N,), regardless of flags or toggles; rotation
retries (rare degeneracies) draw fresh (k, 6) blocks afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (ConfigError, ContractError, DegeneracyError, GaussianCloud,
                   quat_to_rotmat, rotmat_to_quat)

ROT_RETRY_LIMIT = 8
_DEGENERATE_NORM = 1e-12


@dataclass
class NoiseSchedule:
    omega_start: float = 0.08
    omega_end: float = 0.02
    total_iters: int = 10_000
    decay_shape: str = "log"      # "log" (exponential) or "linear"
    positions: bool = True
    rotations: bool = True
    scales: bool = True
    opacities: bool = True

    def __post_init__(self):
        if not self.omega_start >= self.omega_end > 0:
            raise ConfigError("noise schedule needs omega_start >= omega_end > 0")
        if self.decay_shape not in ("log", "linear"):
            raise ConfigError("decay_shape must be 'log' or 'linear'")

    @classmethod
    def from_config(cls, cfg):
        return cls(omega_start=cfg.omega_start, omega_end=cfg.omega_end,
                   total_iters=cfg.total_iters, decay_shape=cfg.decay_shape,
                   positions=cfg.perturb_positions, rotations=cfg.perturb_rotations,
                   scales=cfg.perturb_scales, opacities=cfg.perturb_opacities)


def omega_at(sched: NoiseSchedule, iteration) -> float:
    """Noise level at an iteration; non-increasing over the schedule."""
    frac = min(max(iteration / sched.total_iters, 0.0), 1.0)
    if sched.decay_shape == "linear":
        return sched.omega_start + (sched.omega_end - sched.omega_start) * frac
    return float(sched.omega_start * (sched.omega_end / sched.omega_start) ** frac)


def noise_sigma(values, omega) -> float:
    """omega times the mean per-Gaussian L1 norm of a parameter group."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    return float(omega * np.abs(values).sum(axis=-1).mean())


def rot_to_6d(R) -> np.ndarray:
    """First two columns of a rotation matrix, concatenated."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def sixd_to_rot(v) -> np.ndarray:
    """Gram-Schmidt inverse of the 6D representation; det is always +1."""
    v = np.asarray(v, dtype=np.float64).reshape(6)
    n1 = np.linalg.norm(v[:3])
    if n1 < _DEGENERATE_NORM:
        raise DegeneracyError("first 6D column has (near-)zero norm")
    b1 = v[:3] / n1
    u = v[3:] - (b1 @ v[3:]) * b1
    n2 = np.linalg.norm(u)
    if n2 < _DEGENERATE_NORM:
        raise DegeneracyError("6D columns are (near-)parallel")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def _sixd_to_rot_batch(v):
    """Batch Gram-Schmidt; returns (rotations, ok_mask)."""
    v = np.asarray(v, dtype=np.float64)
    n1 = np.linalg.norm(v[:, :3], axis=1)
    ok = n1 >= _DEGENERATE_NORM
    b1 = v[:, :3] / np.where(ok, n1, 1.0)[:, None]
    u = v[:, 3:] - (b1 * v[:, 3:]).sum(axis=1, keepdims=True) * b1
    n2 = np.linalg.norm(u, axis=1)
    ok &= n2 >= _DEGENERATE_NORM
    b2 = u / np.where(ok, n2, 1.0)[:, None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=2), ok


def group_sigmas(cloud: GaussianCloud, omega) -> dict:
    """Adaptive noise scale per parameter group at the given omega."""
    six = rot_to_6d(quat_to_rotmat(cloud.rot))
    return {
        "mu": noise_sigma(cloud.mu, omega),
        "rot6d": noise_sigma(six, omega),
        "log_scale": noise_sigma(cloud.log_scale, omega),
        "opacity_logit": noise_sigma(cloud.opacity_logit[:, None], omega),
    }


def perturb_model(cloud: GaussianCloud, flags, sched: NoiseSchedule,
                  iteration, rng) -> GaussianCloud:
    """Return a copy of the cloud with flagged Gaussians perturbed.

    Unflagged Gaussians are bit-identical to the input. Rotations whose
    noised 6D vector is degenerate are retried with fresh noise up to
    ROT_RETRY_LIMIT times, then left unperturbed.
    """
    flags = np.asarray(flags, dtype=bool)
    n = len(cloud)
    if flags.shape != (n,):
        raise ContractError(f"flags shape {flags.shape} != ({n},)")
    omega = omega_at(sched, iteration)
    sig = group_sigmas(cloud, omega)

    pos_noise = rng.standard_normal((n, 3)) * sig["mu"]
    rot_noise = rng.standard_normal((n, 6)) * sig["rot6d"]
    scale_noise = rng.standard_normal((n, 3)) * sig["log_scale"]
    op_noise = rng.standard_normal(n) * sig["opacity_logit"]

    out = cloud.copy()
    idx = np.nonzero(flags)[0]
    if idx.size == 0:
        return out
    if sched.positions and sig["mu"] > 0:
        out.mu[idx] += pos_noise[idx]
    if sched.scales and sig["log_scale"] > 0:
        out.log_scale[idx] += scale_noise[idx]
    if sched.opacities and sig["opacity_logit"] > 0:
        out.opacity_logit[idx] += op_noise[idx]
    if sched.rotations and sig["rot6d"] > 0:
        six = rot_to_6d(quat_to_rotmat(cloud.rot[idx]))
        noised = six + rot_noise[idx]
        R, ok = _sixd_to_rot_batch(noised)
        for _ in range(ROT_RETRY_LIMIT):
            if ok.all():
                break
            bad = np.nonzero(~ok)[0]
            retry = six[bad] + rng.standard_normal((bad.size, 6)) * sig["rot6d"]
            R_retry, ok_retry = _sixd_to_rot_batch(retry)
            R[bad[ok_retry]] = R_retry[ok_retry]
            ok[bad[ok_retry]] = True
        for k, gi in enumerate(idx):
            if ok[k]:
                out.rot[gi] = rotmat_to_quat(R[k])
    return out
