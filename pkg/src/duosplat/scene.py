"""Procedural synthetic scenes with closed-loop ground truth.

A scene is a random colored Gaussian cloud, a jittered camera orbit split
into training and held-out views, ground-truth images rendered by this
package's own renderer, and a noisy (or fully random) point set standing in
for a structure-from-motion initialization.

Scene files persist the generator output (cloud, cameras, points); images
are re-rendered on load, so a round-tripped scene is bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, GaussianCloud, logit, random_quats
from .renderer import SH_C0, render
from .views import camera_from_dict, camera_to_dict
from .core import CameraPose

SCENE_FORMAT = "duosplat-scene-v1"


@dataclass
class SceneSpec:
    n_gaussians: int = 200
    n_cams: int = 12
    n_train: int = 3
    width: int = 64
    height: int = 64
    orbit_radius: float = 2.2
    focal_scale: float = 1.2
    init_noise: float = 0.12
    random_init: bool = False
    seed: int = 0

    def validate(self):
        if not 50 <= self.n_gaussians <= 500:
            raise ConfigError("n_gaussians must lie in [50, 500]")
        if self.n_cams < 2:
            raise ConfigError("need at least two cameras")
        if not 1 <= self.n_train < self.n_cams:
            raise ConfigError("n_train must leave at least one held-out camera")
        if not (64 <= self.width <= 128 and 64 <= self.height <= 128):
            raise ConfigError("image size must lie in [64, 128] pixels")
        if self.orbit_radius <= 0:
            raise ConfigError("orbit_radius must be positive")
        return self


@dataclass
class SyntheticScene:
    gt_cloud: GaussianCloud
    train_cams: list
    heldout_cams: list
    train_images: list
    heldout_images: list
    init_points: np.ndarray
    init_colors: np.ndarray
    spec: SceneSpec = None


def _look_at_camera(center, target, width, height, focal):
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.98:
        up = np.array([0.0, 1.0, 0.0])
    xc = np.cross(forward, up)
    xc = xc / np.linalg.norm(xc)
    yc = np.cross(forward, xc)
    rotation = np.stack([xc, yc, forward])
    return CameraPose(rotation=rotation, center=center, fx=focal, fy=focal,
                      cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height)


def gen_scene(spec: SceneSpec, rng=None) -> SyntheticScene:
    """Generate a scene; bit-identical for the same spec (seed included)."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    n = spec.n_gaussians
    mu = rng.normal(0.0, 0.35, (n, 3))
    rot = random_quats(rng, n)
    log_scale = np.log(rng.uniform(0.02, 0.06, (n, 3)))
    opacity_logit = logit(rng.uniform(0.4, 0.95, n))
    base_colors = rng.uniform(0.1, 0.9, (n, 3))
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = (base_colors - 0.5) / SH_C0
    sh[:, :, 1:] = rng.normal(0.0, 0.15, (n, 3, 3))
    gt_cloud = GaussianCloud(mu, rot, log_scale, opacity_logit, sh)

    centroid = mu.mean(axis=0)
    target = centroid + rng.uniform(-0.05, 0.05, 3)
    focal = spec.focal_scale * spec.width
    cams = []
    for k in range(spec.n_cams):
        az = 2.0 * np.pi * k / spec.n_cams + rng.uniform(-0.15, 0.15)
        el = rng.uniform(0.05, 0.45)
        radius = spec.orbit_radius * rng.uniform(0.95, 1.1)
        center = target + radius * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(_look_at_camera(center, target, spec.width, spec.height, focal))

    train_idx = np.round(np.linspace(0, spec.n_cams, spec.n_train,
                                     endpoint=False)).astype(int)
    train_set = set(int(i) for i in train_idx)
    train_cams = [cams[i] for i in sorted(train_set)]
    heldout_cams = [cams[i] for i in range(spec.n_cams) if i not in train_set]

    if spec.random_init:
        init_points = rng.uniform(-0.6, 0.6, (n, 3))
        init_colors = rng.uniform(0.2, 0.8, (n, 3))
    else:
        init_points = mu + rng.normal(0.0, spec.init_noise, (n, 3))
        init_colors = np.clip(base_colors + rng.normal(0.0, 0.05, (n, 3)),
                              0.05, 0.95)

    train_images = [render(gt_cloud, cam).image for cam in train_cams]
    heldout_images = [render(gt_cloud, cam).image for cam in heldout_cams]
    return SyntheticScene(gt_cloud=gt_cloud, train_cams=train_cams,
                          heldout_cams=heldout_cams, train_images=train_images,
                          heldout_images=heldout_images, init_points=init_points,
                          init_colors=init_colors, spec=spec)


def save_scene(scene: SyntheticScene, path):
    cloud = scene.gt_cloud
    data = {
        "format": SCENE_FORMAT,
        "spec": vars(scene.spec) if scene.spec else None,
        "gt_cloud": {
            "mu": cloud.mu.tolist(),
            "rot": cloud.rot.tolist(),
            "log_scale": cloud.log_scale.tolist(),
            "opacity_logit": cloud.opacity_logit.tolist(),
            "sh": cloud.sh.tolist(),
        },
        "train_cams": [camera_to_dict(c) for c in scene.train_cams],
        "heldout_cams": [camera_to_dict(c) for c in scene.heldout_cams],
        "init_points": scene.init_points.tolist(),
        "init_colors": scene.init_colors.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(data, fh)
        fh.write("\n")


def load_scene(path) -> SyntheticScene:
    """Load a scene file; ground-truth images are re-rendered from the cloud."""
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != SCENE_FORMAT:
        raise ConfigError(f"not a scene file (format {data.get('format')!r})")
    g = data["gt_cloud"]
    gt_cloud = GaussianCloud(
        mu=np.asarray(g["mu"]), rot=np.asarray(g["rot"]),
        log_scale=np.asarray(g["log_scale"]),
        opacity_logit=np.asarray(g["opacity_logit"]), sh=np.asarray(g["sh"]))
    train_cams = [camera_from_dict(c) for c in data["train_cams"]]
    heldout_cams = [camera_from_dict(c) for c in data["heldout_cams"]]
    spec = SceneSpec(**data["spec"]) if data.get("spec") else None
    return SyntheticScene(
        gt_cloud=gt_cloud, train_cams=train_cams, heldout_cams=heldout_cams,
        train_images=[render(gt_cloud, c).image for c in train_cams],
        heldout_images=[render(gt_cloud, c).image for c in heldout_cams],
        init_points=np.asarray(data["init_points"]),
        init_colors=np.asarray(data["init_colors"]), spec=spec)
