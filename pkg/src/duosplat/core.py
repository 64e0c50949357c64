"""Core domain types: Gaussian parameter containers, camera poses, validation.

Conventions used throughout the package:

* quaternions are scalar-first ``(w, x, y, z)`` and kept unit-norm,
* scales are stored as logs, opacities as logits, so every finite
  parameter vector maps to a valid Gaussian,
* spherical harmonics are degree <= 1: four coefficients per color channel,
* cameras are pinhole, world-to-camera, with image y pointing down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Non-finite or otherwise invalid Gaussian parameters."""


class DegeneracyError(ArithmeticError):
    """A numerical degeneracy (singular covariance, zero-length axis)."""


class ContractError(ValueError):
    """Caller violated an interface contract (shape/view mismatch)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


SH_COEFFS = 4  # degree-1 spherical harmonics: 1 + 3 coefficients per channel

QUAT_NORM_TOL = 1e-6
ROTATION_TOL = 1e-6


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ParameterError("cannot normalize zero or non-finite quaternion")
    return q / norm


def quat_to_rotmat(q):
    """Rotation matrices for scalar-first quaternions, shape (..., 4) -> (..., 3, 3).

    Inputs are normalized internally; gradients elsewhere chain through
    this normalization.
    """
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R):
    """Scalar-first unit quaternion for a single 3x3 rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_normalize(q)


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------

@dataclass
class Gaussian:
    """A single anisotropic 3D Gaussian primitive."""

    mu: np.ndarray             # (3,) world position
    rot: np.ndarray            # (4,) unit quaternion, scalar first
    log_scale: np.ndarray      # (3,) log of per-axis standard deviations
    opacity_logit: float
    sh: np.ndarray             # (3, SH_COEFFS) per-channel SH coefficients

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(3, SH_COEFFS)


class GaussianCloud:
    """Struct-of-arrays container for an ordered set of Gaussians.

    A cloud is a plain value: copying it detaches all state, and nothing
    here is shared between threads.
    """

    __slots__ = ("mu", "rot", "log_scale", "opacity_logit", "sh", "step")

    def __init__(self, mu, rot, log_scale, opacity_logit, sh, step=0):
        self.mu = np.ascontiguousarray(mu, dtype=np.float64)
        self.rot = np.ascontiguousarray(rot, dtype=np.float64)
        self.log_scale = np.ascontiguousarray(log_scale, dtype=np.float64)
        self.opacity_logit = np.ascontiguousarray(opacity_logit, dtype=np.float64)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64)
        self.step = int(step)
        n = self.mu.shape[0]
        if (self.mu.shape != (n, 3) or self.rot.shape != (n, 4)
                or self.log_scale.shape != (n, 3)
                or self.opacity_logit.shape != (n,)
                or self.sh.shape != (n, 3, SH_COEFFS)):
            raise ContractError("inconsistent parameter array shapes")

    @classmethod
    def from_gaussians(cls, gaussians, step=0):
        if not gaussians:
            raise ParameterError("a cloud needs at least one Gaussian")
        return cls(
            mu=np.stack([g.mu for g in gaussians]),
            rot=np.stack([g.rot for g in gaussians]),
            log_scale=np.stack([g.log_scale for g in gaussians]),
            opacity_logit=np.array([g.opacity_logit for g in gaussians]),
            sh=np.stack([g.sh for g in gaussians]),
            step=step,
        )

    def __len__(self):
        return self.mu.shape[0]

    def __getitem__(self, i) -> Gaussian:
        return Gaussian(self.mu[i].copy(), self.rot[i].copy(),
                        self.log_scale[i].copy(), float(self.opacity_logit[i]),
                        self.sh[i].copy())

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.mu.copy(), self.rot.copy(),
                             self.log_scale.copy(), self.opacity_logit.copy(),
                             self.sh.copy(), self.step)

    def equals(self, other) -> bool:
        """Bitwise parameter equality (step counter excluded)."""
        return (len(self) == len(other)
                and np.array_equal(self.mu, other.mu)
                and np.array_equal(self.rot, other.rot)
                and np.array_equal(self.log_scale, other.log_scale)
                and np.array_equal(self.opacity_logit, other.opacity_logit)
                and np.array_equal(self.sh, other.sh))

    @property
    def scales(self):
        return np.exp(self.log_scale)

    @property
    def opacities(self):
        return sigmoid(self.opacity_logit)


def covariance_matrices(cloud: GaussianCloud) -> np.ndarray:
    """World-space covariances R S S^T R^T for every Gaussian, shape (N, 3, 3)."""
    if not (np.all(np.isfinite(cloud.rot)) and np.all(np.isfinite(cloud.log_scale))):
        raise ParameterError("non-finite rotation or scale parameters")
    R = quat_to_rotmat(cloud.rot)
    M = R * np.exp(cloud.log_scale)[:, None, :]   # R @ diag(s)
    return M @ np.transpose(M, (0, 2, 1))


def covariance3d(g: Gaussian) -> np.ndarray:
    """World-space covariance of a single Gaussian; symmetric PSD (3, 3)."""
    if not (np.all(np.isfinite(g.rot)) and np.all(np.isfinite(g.log_scale))):
        raise ParameterError("non-finite rotation or scale parameters")
    R = quat_to_rotmat(g.rot)
    M = R * np.exp(g.log_scale)[None, :]
    return M @ M.T


def validate_cloud(cloud: GaussianCloud):
    """Check every type invariant; returns a list of violation strings.

    Each violation names the offending Gaussian index and field.
    """
    violations = []
    if len(cloud) < 1:
        violations.append("cloud: empty (N >= 1 required)")
        return violations
    for idx in np.nonzero(~np.isfinite(cloud.mu).all(axis=1))[0]:
        violations.append(f"gaussian {idx}: mu is non-finite")
    bad_rot = ~np.isfinite(cloud.rot).all(axis=1)
    for idx in np.nonzero(bad_rot)[0]:
        violations.append(f"gaussian {idx}: rot is non-finite")
    norms = np.linalg.norm(np.where(bad_rot[:, None], 1.0, cloud.rot), axis=1)
    for idx in np.nonzero(np.abs(norms - 1.0) > QUAT_NORM_TOL)[0]:
        if not bad_rot[idx]:
            violations.append(f"gaussian {idx}: rot norm {norms[idx]:.6g} not unit")
    scales = np.exp(cloud.log_scale)
    bad_scale = ~(np.isfinite(scales) & (scales > 0)).all(axis=1)
    for idx in np.nonzero(bad_scale)[0]:
        violations.append(f"gaussian {idx}: log_scale maps outside (0, inf)")
    op = sigmoid(np.where(np.isfinite(cloud.opacity_logit), cloud.opacity_logit, 0.0))
    bad_op = ~np.isfinite(cloud.opacity_logit) | (op <= 0) | (op >= 1)
    for idx in np.nonzero(bad_op)[0]:
        violations.append(f"gaussian {idx}: opacity_logit outside the open unit interval")
    for idx in np.nonzero(~np.isfinite(cloud.sh).all(axis=(1, 2)))[0]:
        violations.append(f"gaussian {idx}: sh is non-finite")
    return violations


# ---------------------------------------------------------------------------
# Cameras and images
# ---------------------------------------------------------------------------

@dataclass
class CameraPose:
    """Pinhole camera: world-to-camera rotation plus intrinsics in pixels.

    ``translation`` is derived from the stored center so the invariant
    T = -R c holds by construction.
    """

    rotation: np.ndarray     # (3, 3) world -> camera
    center: np.ndarray       # (3,) camera center in world coordinates
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.width = int(self.width)
        self.height = int(self.height)

    @property
    def translation(self) -> np.ndarray:
        return -self.rotation @ self.center

    def world_to_camera(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def same_intrinsics(self, other, tol=1e-9) -> bool:
        return (abs(self.fx - other.fx) <= tol and abs(self.fy - other.fy) <= tol
                and abs(self.cx - other.cx) <= tol and abs(self.cy - other.cy) <= tol
                and self.width == other.width and self.height == other.height)

    def validate(self):
        violations = []
        RtR = self.rotation @ self.rotation.T
        if not np.allclose(RtR, np.eye(3), atol=ROTATION_TOL):
            violations.append("rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > ROTATION_TOL:
            violations.append("rotation determinant is not +1")
        if self.width < 8 or self.height < 8:
            violations.append("image size below 8x8")
        if not (np.isfinite(self.fx) and np.isfinite(self.fy) and self.fx > 0 and self.fy > 0):
            violations.append("focal lengths must be positive and finite")
        return violations


def validate_image(img) -> np.ndarray:
    """Assert the (H, W, 3) float layout with finite values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ParameterError("image values outside [0, 1]")
    return img
