"""Differentiable splat renderer.

Forward path: each Gaussian is projected to a 2D splat (pinhole Jacobian
around the camera-space center), splats are depth-sorted and alpha-blended
front to back, and every splat reports the pixel set its 3-sigma footprint
ellipse covers. Backward path: hand-derived gradients of the blended image
with respect to all five parameter groups, chained through the blend, the
alpha model, the covariance projection, the quaternion/scale decomposition,
and the view-dependent SH color (including the view-direction term).

Numerical rules, applied identically here and in any reference evaluator:

* splats behind the near plane (camera z <= 0.01) are culled,
* a pixel belongs to a splat iff its Mahalanobis distance under the raw
  projected covariance is <= 3 sigma,
* blending alphas use the projected covariance plus 0.3 * I (screen-space
  low-pass), clamped to 0.99, contributions below 1/255 skipped,
* a pixel's blend terminates once transmittance falls below 1e-4,
* the final image is clamped to [0, 1]; gradients respect the clamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import ALPHA_MAX, ALPHA_MIN, FOOTPRINT_Q, T_TERMINATE
from .core import (CameraPose, ContractError, DegeneracyError, Gaussian,
                   GaussianCloud, ParameterError, covariance3d,
                   quat_to_rotmat, sigmoid)

NEAR_PLANE = 0.01
COV2D_REG = 0.3       # screen-space covariance regularizer added before inversion
FOOTPRINT_EPS = 1e-12

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


def sh_basis(dirs):
    """Degree-1 real SH basis for unit view directions, shape (N, 4)."""
    dirs = np.atleast_2d(dirs)
    ones = np.ones(dirs.shape[0])
    return np.stack([SH_C0 * ones,
                     -SH_C1 * dirs[:, 1],
                     SH_C1 * dirs[:, 2],
                     -SH_C1 * dirs[:, 0]], axis=1)


def eval_sh_colors(sh, dirs):
    """View-dependent colors before clamping: basis dot coefficients + 0.5."""
    basis = sh_basis(dirs)
    return np.einsum("nca,na->nc", sh, basis) + 0.5, basis


def eval_gaussian3d(g: Gaussian, x) -> float:
    """Unnormalized 3D Gaussian density exp(-0.5 d^T Sigma^-1 d) at x."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    cov = covariance3d(g)
    if not np.all(np.isfinite(cov)):
        raise ParameterError("non-finite covariance")
    d = x - g.mu
    jitter = 1e-12 * max(np.trace(cov) / 3.0, 1e-30)
    try:
        sol = np.linalg.solve(cov, d)
    except np.linalg.LinAlgError:
        try:
            sol = np.linalg.solve(cov + jitter * np.eye(3), d)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("covariance is singular after regularization") from exc
    q = float(d @ sol)
    if not np.isfinite(q):
        raise DegeneracyError("covariance is numerically degenerate")
    return float(np.exp(-0.5 * max(q, 0.0)))


@dataclass
class Splat2D:
    """A Gaussian projected into one camera; covariance is the raw projection."""

    mean2d: np.ndarray   # (2,) pixel coordinates (x, y)
    cov2d: np.ndarray    # (2, 2) projected covariance J W Sigma W^T J^T
    depth: float         # camera-space z
    color: np.ndarray    # (3,) SH color for this view, clamped >= 0
    opacity: float       # sigmoid of the stored logit


@dataclass
class CloudGradients:
    """Per-Gaussian gradients, one array per parameter group.

    ``viewspace`` (screen-space positional gradients) and ``visible`` are
    auxiliary outputs used by density control.
    """

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    viewspace: np.ndarray = None
    visible: np.ndarray = None

    @classmethod
    def zeros(cls, n):
        return cls(mu=np.zeros((n, 3)), rot=np.zeros((n, 4)),
                   log_scale=np.zeros((n, 3)), opacity_logit=np.zeros(n),
                   sh=np.zeros((n, 3, 4)), viewspace=np.zeros((n, 2)),
                   visible=np.zeros(n, dtype=bool))

    def add_(self, other):
        self.mu += other.mu
        self.rot += other.rot
        self.log_scale += other.log_scale
        self.opacity_logit += other.opacity_logit
        self.sh += other.sh
        if self.viewspace is not None and other.viewspace is not None:
            self.viewspace += other.viewspace
            self.visible |= other.visible
        return self

    def scale_(self, factor):
        self.mu *= factor
        self.rot *= factor
        self.log_scale *= factor
        self.opacity_logit *= factor
        self.sh *= factor
        return self


@dataclass
class RenderOutput:
    """Rendered image plus the records needed for flags and gradients."""

    image: np.ndarray          # (H, W, 3) clamped to [0, 1]
    coverage_gauss: np.ndarray  # (K,) int32, grouped per splat in depth order
    coverage_pix: np.ndarray    # (K,) int32 flat pixel indices (y * W + x)
    rec_pix: np.ndarray        # blend records, grouped by pixel, front-to-back
    rec_gauss: np.ndarray
    rec_alpha: np.ndarray
    rec_T: np.ndarray          # transmittance seen by each record
    T_final: np.ndarray        # (H*W,) final (frozen) transmittance
    width: int
    height: int
    _ctx: dict = field(repr=False, default=None)

    def coverage_pixels(self, i):
        """Flat pixel indices covered by Gaussian i's footprint."""
        return self.coverage_pix[self.coverage_gauss == i]

    def coverage_counts(self, n):
        return np.bincount(self.coverage_gauss, minlength=n)


def _pack_inverse(cov, reg):
    """Packed (a, b, c) inverse of cov + reg * I for a batch of 2x2 matrices."""
    a = cov[:, 0, 0] + reg
    b = cov[:, 0, 1]
    c = cov[:, 1, 1] + reg
    det = a * c - b * b
    ok = (det > 0) & np.isfinite(det)
    safe = np.where(ok, det, 1.0)
    packed = np.stack([c / safe, -b / safe, a / safe], axis=1)
    packed[~ok] = 0.0
    return packed, ok


def _project_cloud(cloud: GaussianCloud, cam: CameraPose) -> dict:
    n = len(cloud)
    W = cam.rotation
    t = cloud.mu @ W.T + cam.translation
    valid = np.isfinite(t).all(axis=1) & (t[:, 2] > NEAR_PLANE)
    tz = np.where(valid, t[:, 2], 1.0)
    mean2d = np.stack([cam.fx * t[:, 0] / tz + cam.cx,
                       cam.fy * t[:, 1] / tz + cam.cy], axis=1)

    q_norm = np.linalg.norm(cloud.rot, axis=1)
    q_safe = np.where(q_norm > 0, q_norm, 1.0)
    q_hat = cloud.rot / q_safe[:, None]
    R = quat_to_rotmat(q_hat)
    s = np.exp(cloud.log_scale)
    M = R * s[:, None, :]
    sigma3 = M @ M.transpose(0, 2, 1)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * t[:, 0] / (tz * tz)
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * t[:, 1] / (tz * tz)
    A = J @ W
    cov2d = A @ sigma3 @ A.transpose(0, 2, 1)

    diff = cloud.mu - cam.center
    dist = np.linalg.norm(diff, axis=1)
    dist_safe = np.where(dist > 0, dist, 1.0)
    dirs = diff / dist_safe[:, None]
    color_raw, basis = eval_sh_colors(cloud.sh, dirs)
    color = np.maximum(color_raw, 0.0)
    opa = sigmoid(cloud.opacity_logit)

    conic_raw, ok_raw = _pack_inverse(cov2d, FOOTPRINT_EPS)
    conic_blend, ok_blend = _pack_inverse(cov2d, COV2D_REG)
    valid = valid & ok_raw & ok_blend & np.isfinite(cov2d).all(axis=(1, 2))

    rx = 3.0 * np.sqrt(np.maximum(cov2d[:, 0, 0] + FOOTPRINT_EPS, 0.0))
    ry = 3.0 * np.sqrt(np.maximum(cov2d[:, 1, 1] + FOOTPRINT_EPS, 0.0))
    x0 = np.maximum(np.ceil(mean2d[:, 0] - rx), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mean2d[:, 0] + rx), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - ry), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mean2d[:, 1] + ry), cam.height - 1).astype(np.int64)
    x1 = np.where(valid, x1, -1)
    y1 = np.where(valid, y1, -1)
    x0 = np.where(valid, x0, 0)
    y0 = np.where(valid, y0, 0)

    return dict(t=t, tz=tz, valid=valid, mean2d=mean2d, depth=t[:, 2].copy(),
                q_norm=q_safe, q_hat=q_hat, R=R, s=s, M=M, sigma3=sigma3,
                A=A, cov2d=cov2d, dirs=dirs, dist=dist_safe, basis=basis,
                color_raw=color_raw, color=color, opa=opa,
                conic_raw=conic_raw, conic_blend=conic_blend,
                x0=x0, x1=x1, y0=y0, y1=y1)


def project(g: Gaussian, cam: CameraPose):
    """Project one Gaussian; returns a Splat2D, or None when culled."""
    cloud = GaussianCloud(g.mu[None], g.rot[None], g.log_scale[None],
                          np.array([g.opacity_logit]), g.sh[None])
    ctx = _project_cloud(cloud, cam)
    if ctx["t"][0, 2] <= NEAR_PLANE:
        return None
    return Splat2D(mean2d=ctx["mean2d"][0].copy(), cov2d=ctx["cov2d"][0].copy(),
                   depth=float(ctx["depth"][0]), color=ctx["color"][0].copy(),
                   opacity=float(ctx["opa"][0]))


def coverage_footprint(splat: Splat2D, width, height) -> np.ndarray:
    """Flat indices of pixels inside the splat's 3-sigma ellipse, clipped."""
    cov = np.asarray(splat.cov2d, dtype=np.float64)
    a = cov[0, 0] + FOOTPRINT_EPS
    b = cov[0, 1]
    c = cov[1, 1] + FOOTPRINT_EPS
    det = a * c - b * b
    if not (np.isfinite(det) and det > 0):
        return np.empty(0, dtype=np.int32)
    ia, ib, ic = c / det, -b / det, a / det
    mx, my = float(splat.mean2d[0]), float(splat.mean2d[1])
    rx = 3.0 * np.sqrt(a)
    ry = 3.0 * np.sqrt(c)
    x0 = max(int(np.ceil(mx - rx)), 0)
    x1 = min(int(np.floor(mx + rx)), width - 1)
    y0 = max(int(np.ceil(my - ry)), 0)
    y1 = min(int(np.floor(my + ry)), height - 1)
    if x1 < x0 or y1 < y0:
        return np.empty(0, dtype=np.int32)
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    dx = xs[None, :] - mx
    dy = ys[:, None] - my
    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
    yy, xx = np.nonzero(q <= FOOTPRINT_Q)
    return ((yy + y0) * width + (xx + x0)).astype(np.int32)


def render(cloud: GaussianCloud, cam: CameraPose, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Rasterize the cloud into cam; deterministic for identical inputs."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    n_pix = cam.width * cam.height
    n = len(cloud)
    if n == 0:
        image = np.clip(np.broadcast_to(bg, (cam.height, cam.width, 3)).copy(), 0.0, 1.0)
        e_i = np.empty(0, dtype=np.int32)
        e_f = np.empty(0, dtype=np.float64)
        return RenderOutput(image=image, coverage_gauss=e_i, coverage_pix=e_i,
                            rec_pix=e_i, rec_gauss=e_i, rec_alpha=e_f, rec_T=e_f,
                            T_final=np.ones(n_pix), width=cam.width, height=cam.height,
                            _ctx=dict(empty=True, background=bg, cam=cam, cloud=cloud,
                                      image_raw=image.copy()))

    ctx = _project_cloud(cloud, cam)
    order = np.argsort(ctx["depth"], kind="stable").astype(np.int64)
    order = order[ctx["valid"][order]]
    cov_g, cov_p, rec_p, rec_g, rec_a = _kernels.emit_records(
        order, ctx["mean2d"], ctx["conic_raw"], ctx["conic_blend"], ctx["opa"],
        ctx["x0"], ctx["x1"], ctx["y0"], ctx["y1"], cam.width)
    rec_p, rec_g, rec_a = _kernels.sort_records_by_pixel(rec_p, rec_g, rec_a, n_pix)
    img_flat, T_final, rec_T = _kernels.blend_forward(
        rec_p, rec_g, rec_a, ctx["color"], n_pix, bg)
    image_raw = img_flat.reshape(cam.height, cam.width, 3)
    image = np.clip(image_raw, 0.0, 1.0)
    ctx.update(background=bg, cam=cam, cloud=cloud, image_raw=image_raw)
    return RenderOutput(image=image, coverage_gauss=cov_g, coverage_pix=cov_p,
                        rec_pix=rec_p, rec_gauss=rec_g, rec_alpha=rec_a, rec_T=rec_T,
                        T_final=T_final, width=cam.width, height=cam.height, _ctx=ctx)


def render_backward(out: RenderOutput, d_image) -> CloudGradients:
    """Analytic gradients of the rendered image contracted with d_image.

    d_image must match the image shape; gradients flow through the output
    clamp, the blend, alpha, the covariance projection, and SH color.
    """
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != out.image.shape:
        raise ContractError(f"d_image shape {d_image.shape} != image {out.image.shape}")
    ctx = out._ctx
    if ctx is None:
        raise ContractError("RenderOutput lacks backward context")
    cloud = ctx["cloud"]
    n = len(cloud)
    grads = CloudGradients.zeros(n)
    if n == 0 or ctx.get("empty", False):
        return grads

    cam = ctx["cam"]
    # clamp mask: no gradient where the output saturated at 1
    d_eff = np.where(ctx["image_raw"] < 1.0, d_image, 0.0).reshape(-1, 3)
    d_eff = np.ascontiguousarray(d_eff)
    d_mean2d, d_conic, d_opa, d_color = _kernels.blend_backward(
        out.rec_pix, out.rec_gauss, out.rec_alpha, out.rec_T,
        ctx["mean2d"], ctx["conic_blend"], ctx["color"], ctx["opa"],
        d_eff, out.T_final, ctx["background"], n, cam.width)

    valid = ctx["valid"]
    opa = ctx["opa"]
    grads.opacity_logit = d_opa * opa * (1.0 - opa)

    # color -> SH coefficients and view direction
    mask = ctx["color_raw"] > 0.0
    dce = d_color * mask
    grads.sh = dce[:, :, None] * ctx["basis"][:, None, :]
    sh = cloud.sh
    d_dir = np.stack([
        -SH_C1 * (dce * sh[:, :, 3]).sum(axis=1),
        -SH_C1 * (dce * sh[:, :, 1]).sum(axis=1),
        SH_C1 * (dce * sh[:, :, 2]).sum(axis=1)], axis=1)
    dirs = ctx["dirs"]
    d_mu = (d_dir - dirs * (dirs * d_dir).sum(axis=1, keepdims=True)) / ctx["dist"][:, None]

    # screen position -> camera-space point
    t = ctx["t"]
    tz = ctx["tz"]
    fx, fy = cam.fx, cam.fy
    inv_z = 1.0 / tz
    inv_z2 = inv_z * inv_z
    d_t = np.zeros((n, 3))
    d_t[:, 0] = d_mean2d[:, 0] * fx * inv_z
    d_t[:, 1] = d_mean2d[:, 1] * fy * inv_z
    d_t[:, 2] = (-d_mean2d[:, 0] * fx * t[:, 0] - d_mean2d[:, 1] * fy * t[:, 1]) * inv_z2

    # conic -> projected covariance (through the regularized inverse)
    pc = ctx["conic_blend"]
    conic_m = np.empty((n, 2, 2))
    conic_m[:, 0, 0] = pc[:, 0]
    conic_m[:, 0, 1] = conic_m[:, 1, 0] = pc[:, 1]
    conic_m[:, 1, 1] = pc[:, 2]
    gc = np.empty((n, 2, 2))
    gc[:, 0, 0] = d_conic[:, 0]
    gc[:, 0, 1] = gc[:, 1, 0] = 0.5 * d_conic[:, 1]
    gc[:, 1, 1] = d_conic[:, 2]
    g_cov = -conic_m @ gc @ conic_m

    # covariance -> world covariance and the projection Jacobian
    A = ctx["A"]
    sigma3 = ctx["sigma3"]
    h3 = np.einsum("nki,nkl,nlj->nij", A, g_cov, A)
    d_A = 2.0 * np.einsum("nkl,nli,nij->nkj", g_cov, A, sigma3)
    d_J = np.einsum("nki,mi->nkm", d_A, cam.rotation)
    d_t[:, 0] += d_J[:, 0, 2] * (-fx * inv_z2)
    d_t[:, 1] += d_J[:, 1, 2] * (-fy * inv_z2)
    d_t[:, 2] += (d_J[:, 0, 0] * (-fx * inv_z2)
                  + d_J[:, 1, 1] * (-fy * inv_z2)
                  + d_J[:, 0, 2] * (2.0 * fx * t[:, 0] * inv_z2 * inv_z)
                  + d_J[:, 1, 2] * (2.0 * fy * t[:, 1] * inv_z2 * inv_z))
    d_mu += d_t @ cam.rotation

    # world covariance -> rotation and scale
    M = ctx["M"]
    s = ctx["s"]
    R = ctx["R"]
    d_M = (h3 + h3.transpose(0, 2, 1)) @ M
    d_R = d_M * s[:, None, :]
    grads.log_scale = s * np.einsum("nik,nik->nk", R, d_M)

    q = ctx["q_hat"]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = d_R
    dq_w = 2.0 * (-z * r[:, 0, 1] + y * r[:, 0, 2] + z * r[:, 1, 0]
                  - x * r[:, 1, 2] - y * r[:, 2, 0] + x * r[:, 2, 1])
    dq_x = 2.0 * (y * r[:, 0, 1] + z * r[:, 0, 2] + y * r[:, 1, 0]
                  - 2.0 * x * r[:, 1, 1] - w * r[:, 1, 2] + z * r[:, 2, 0]
                  + w * r[:, 2, 1] - 2.0 * x * r[:, 2, 2])
    dq_y = 2.0 * (-2.0 * y * r[:, 0, 0] + x * r[:, 0, 1] + w * r[:, 0, 2]
                  + x * r[:, 1, 0] + z * r[:, 1, 2] - w * r[:, 2, 0]
                  + z * r[:, 2, 1] - 2.0 * y * r[:, 2, 2])
    dq_z = 2.0 * (-2.0 * z * r[:, 0, 0] - w * r[:, 0, 1] + x * r[:, 0, 2]
                  + w * r[:, 1, 0] - 2.0 * z * r[:, 1, 1] + y * r[:, 1, 2]
                  + x * r[:, 2, 0] + y * r[:, 2, 1])
    dq_hat = np.stack([dq_w, dq_x, dq_y, dq_z], axis=1)
    grads.rot = (dq_hat - q * (q * dq_hat).sum(axis=1, keepdims=True)) / ctx["q_norm"][:, None]

    grads.mu = d_mu
    # culled splats received no records; zero any garbage from masked math
    keep = valid[:, None]
    grads.mu = np.where(keep, grads.mu, 0.0)
    grads.rot = np.where(keep, grads.rot, 0.0)
    grads.log_scale = np.where(keep, grads.log_scale, 0.0)
    grads.opacity_logit = np.where(valid, grads.opacity_logit, 0.0)
    grads.sh = np.where(valid[:, None, None], grads.sh, 0.0)
    grads.viewspace = np.where(keep, d_mean2d, 0.0)
    grads.visible = valid & (np.bincount(out.coverage_gauss, minlength=n) > 0)
    return grads
