"""Pseudo-view generation: geodesic rotation interpolation between pairs of
training cameras with linear center interpolation.

Convention throughout: beta = 1 returns the first camera, beta = 0 the
second, matching the linear center rule c_hat = beta * c1 + (1 - beta) * c2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraPose, ConfigError, ContractError, quat_to_rotmat, rotmat_to_quat

SLERP_PARALLEL_DOT = 0.9995   # nearly identical rotations: lerp is exact enough
SLERP_ANTIPODAL_DOT = 1e-6    # opposite rotations: geodesic is ambiguous


def slerp_rotation(R1, R2, beta) -> np.ndarray:
    """Spherical linear interpolation between rotation matrices.

    Shortest-arc quaternion path; beta = 1 -> R1, beta = 0 -> R2. Nearly
    parallel or antipodal quaternions fall back to normalized linear
    interpolation.
    """
    q1 = rotmat_to_quat(np.asarray(R1, dtype=np.float64))
    q2 = rotmat_to_quat(np.asarray(R2, dtype=np.float64))
    dot = float(q1 @ q2)
    if dot < 0.0:
        q2 = -q2
        dot = -dot
    if dot > SLERP_PARALLEL_DOT or dot < SLERP_ANTIPODAL_DOT:
        q = beta * q1 + (1.0 - beta) * q2
        norm = np.linalg.norm(q)
        if norm == 0.0:  # exactly antipodal and beta == 0.5
            q = q1
            norm = 1.0
        return quat_to_rotmat(q / norm)
    omega = np.arccos(min(dot, 1.0))
    sin_omega = np.sin(omega)
    w1 = np.sin(beta * omega) / sin_omega
    w2 = np.sin((1.0 - beta) * omega) / sin_omega
    return quat_to_rotmat(w1 * q1 + w2 * q2)


def interpolate_camera(cam1: CameraPose, cam2: CameraPose, beta) -> CameraPose:
    """Pseudo camera between cam1 and cam2 (slerp rotation, lerp center)."""
    if not cam1.same_intrinsics(cam2):
        raise ContractError("interpolated cameras must share intrinsics")
    rotation = slerp_rotation(cam1.rotation, cam2.rotation, beta)
    center = beta * cam1.center + (1.0 - beta) * cam2.center
    return CameraPose(rotation=rotation, center=center,
                      fx=cam1.fx, fy=cam1.fy, cx=cam1.cx, cy=cam1.cy,
                      width=cam1.width, height=cam1.height)


@dataclass
class PseudoViewSet:
    """Fixed set of interpolated cameras plus their provenance."""

    views: list                 # list[CameraPose], length M
    parents: list               # list[(i, j, beta)] parallel to views

    def __len__(self):
        return len(self.views)


def sample_pseudo_views(cams, count, rng, beta_min=0.3, beta_max=0.7) -> PseudoViewSet:
    """Sample `count` pseudo views between uniformly drawn camera pairs.

    Deterministic under a fixed generator; betas are uniform on
    [beta_min, beta_max].
    """
    cams = list(cams)
    if len(cams) < 2:
        raise ConfigError("pseudo views need at least 2 training cameras")
    pairs = [(i, j) for i in range(len(cams)) for j in range(i + 1, len(cams))]
    views = []
    parents = []
    for _ in range(count):
        i, j = pairs[int(rng.integers(len(pairs)))]
        beta = float(rng.uniform(beta_min, beta_max))
        views.append(interpolate_camera(cams[i], cams[j], beta))
        parents.append((i, j, beta))
    return PseudoViewSet(views=views, parents=parents)


def camera_to_dict(cam: CameraPose) -> dict:
    return {
        "rotation": [float(v) for v in cam.rotation.reshape(-1)],  # row-major
        "center": [float(v) for v in cam.center],
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
    }


def camera_from_dict(data: dict) -> CameraPose:
    return CameraPose(
        rotation=np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3),
        center=np.asarray(data["center"], dtype=np.float64),
        fx=data["fx"], fy=data["fy"], cx=data["cx"], cy=data["cy"],
        width=data["width"], height=data["height"],
    )
