"""Image losses: L1, windowed SSIM / D-SSIM, and their combinations.

SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
computed per channel on the interior (valid) window positions and averaged
over positions and channels. Gradients are closed-form; the transpose of
the valid-window convolution is a zero-padded correlation with the same
(symmetric) kernel.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .core import ContractError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    xs = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()

_WINDOW_1D = _gaussian_window()


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) images, got {a.shape}")
    return a, b


def l1_loss(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_grad(a, b) -> np.ndarray:
    """d l1 / d a; the gradient with respect to b is its negative."""
    a, b = _check_pair(a, b)
    return np.sign(a - b) / a.size


def _filter2(img, pad_to_full=False):
    """Separable Gaussian filtering; valid crop, or zero-padded transpose."""
    half = SSIM_WINDOW // 2
    out = correlate1d(img, _WINDOW_1D, axis=0, mode="constant")
    out = correlate1d(out, _WINDOW_1D, axis=1, mode="constant")
    if pad_to_full:
        return out
    return out[half:-half, half:-half]


def _ssim_terms(a, b):
    half = SSIM_WINDOW // 2
    H, W = a.shape[:2]
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ContractError(f"images must be at least {SSIM_WINDOW} pixels per side")
    mu_a = _filter2(a)
    mu_b = _filter2(b)
    a2 = _filter2(a * a)
    b2 = _filter2(b * b)
    ab = _filter2(a * b)
    var_a = a2 - mu_a ** 2
    var_b = b2 - mu_b ** 2
    cov = ab - mu_a * mu_b
    A1 = 2.0 * mu_a * mu_b + SSIM_C1
    B1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    A2 = 2.0 * cov + SSIM_C2
    B2 = var_a + var_b + SSIM_C2
    S = (A1 * A2) / (B1 * B2)
    return dict(mu_a=mu_a, mu_b=mu_b, A1=A1, B1=B1, A2=A2, B2=B2, S=S, half=half)


def ssim(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(_ssim_terms(a, b)["S"]))


def dssim_loss(a, b) -> float:
    """(1 - SSIM) / 2, the structural dissimilarity term."""
    return (1.0 - ssim(a, b)) / 2.0


def _dssim_grad_from_terms(t, a, b, swap=False):
    """Gradient of (1 - mean SSIM) / 2 with respect to `a` given shared terms.

    With swap=True the roles are exchanged, yielding the gradient with
    respect to `b` (SSIM is symmetric, so the window terms are reusable).
    """
    if swap:
        a, b = b, a
        mu_a, mu_b = t["mu_b"], t["mu_a"]
    else:
        mu_a, mu_b = t["mu_a"], t["mu_b"]
    A1, B1, A2, B2, S = t["A1"], t["B1"], t["A2"], t["B2"], t["S"]
    inv = 1.0 / (B1 * B2)
    dS_dA1 = A2 * inv
    dS_dA2 = A1 * inv
    dS_dB1 = -S / B1
    dS_dB2 = -S / B2
    # window statistics (mu_a, a2, ab) as independent inputs
    d_mu_a = (2.0 * mu_b * dS_dA1 + 2.0 * mu_a * dS_dB1
              - 2.0 * mu_b * dS_dA2 - 2.0 * mu_a * dS_dB2)
    d_a2 = dS_dB2
    d_ab = 2.0 * dS_dA2
    half = t["half"]
    H, W = a.shape[:2]

    def lift(field):
        z = np.zeros_like(a)
        z[half:H - half, half:W - half] = field
        return _filter2(z, pad_to_full=True)

    n_terms = S.size
    grad = lift(d_mu_a) + 2.0 * a * lift(d_a2) + b * lift(d_ab)
    return -grad / (2.0 * n_terms)


def dssim_grad(a, b) -> np.ndarray:
    """d dssim / d a. The gradient with respect to b is dssim_grad(b, a)."""
    a, b = _check_pair(a, b)
    return _dssim_grad_from_terms(_ssim_terms(a, b), a, b)


def photometric_loss(rendered, gt, lam) -> float:
    """(1 - lambda) * L1 + lambda * D-SSIM between a rendering and ground truth."""
    return (1.0 - lam) * l1_loss(rendered, gt) + lam * dssim_loss(rendered, gt)


def photometric_grad(rendered, gt, lam) -> np.ndarray:
    return (1.0 - lam) * l1_grad(rendered, gt) + lam * dssim_grad(rendered, gt)


def photometric_loss_and_grad(rendered, gt, lam):
    """Fused loss + gradient; one pass over the window statistics."""
    rendered, gt = _check_pair(rendered, gt)
    t = _ssim_terms(rendered, gt)
    dssim = (1.0 - float(np.mean(t["S"]))) / 2.0
    loss = (1.0 - lam) * l1_loss(rendered, gt) + lam * dssim
    grad = ((1.0 - lam) * l1_grad(rendered, gt)
            + lam * _dssim_grad_from_terms(t, rendered, gt))
    return loss, grad


def regularization_loss(img_sigma, img_delta, lam) -> float:
    """Cross-model consistency on a shared pseudo view; same form as photometric."""
    return photometric_loss(img_sigma, img_delta, lam)


def regularization_grads(img_sigma, img_delta, lam):
    """Gradients for both renderings; the loss is symmetric in its arguments."""
    return (photometric_grad(img_sigma, img_delta, lam),
            photometric_grad(img_delta, img_sigma, lam))


def regularization_loss_and_grads(img_sigma, img_delta, lam):
    """Fused loss plus both gradients, sharing one set of window statistics."""
    img_sigma, img_delta = _check_pair(img_sigma, img_delta)
    t = _ssim_terms(img_sigma, img_delta)
    dssim = (1.0 - float(np.mean(t["S"]))) / 2.0
    loss = (1.0 - lam) * l1_loss(img_sigma, img_delta) + lam * dssim
    l1g = l1_grad(img_sigma, img_delta)
    d_sigma = (1.0 - lam) * l1g + lam * _dssim_grad_from_terms(t, img_sigma, img_delta)
    d_delta = (-(1.0 - lam)) * l1g + lam * _dssim_grad_from_terms(
        t, img_sigma, img_delta, swap=True)
    return loss, d_sigma, d_delta


def total_loss(photo, reg, gamma) -> float:
    return float(photo) + float(gamma) * float(reg)
