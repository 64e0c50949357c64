"""Numba kernels for the software splat rasterizer.

The rasterizer works on flat record arrays: one record per (pixel, splat)
pair whose pixel lies inside the splat's footprint ellipse and whose alpha
clears the contribution cutoff. Records are grouped by pixel and ordered
front-to-back within each pixel, so forward blending and the reverse-walk
backward pass are single linear scans.

All loops are single-threaded on purpose: results must be bit-reproducible.
"""

import numba
import numpy as np

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_TERMINATE = 1e-4
FOOTPRINT_Q = 9.0  # 3-sigma ellipse


@numba.njit(cache=True)
def emit_records(order, mean2d, conic_raw, conic_blend, opacity,
                 x0, x1, y0, y1, width):
    """Generate coverage and blend records for splats in depth order.

    Returns (cov_gauss, cov_pix, rec_pix, rec_gauss, rec_alpha); blend
    records come out grouped by splat in depth order and are re-grouped by
    pixel with :func:`sort_records_by_pixel`.
    """
    n = order.shape[0]
    bound = 0
    for oi in range(n):
        i = order[oi]
        w = x1[i] - x0[i] + 1
        h = y1[i] - y0[i] + 1
        if w > 0 and h > 0:
            bound += w * h
    cov_gauss = np.empty(bound, dtype=np.int32)
    cov_pix = np.empty(bound, dtype=np.int32)
    rec_pix = np.empty(bound, dtype=np.int32)
    rec_gauss = np.empty(bound, dtype=np.int32)
    rec_alpha = np.empty(bound, dtype=np.float64)
    nc = 0
    nr = 0
    for oi in range(n):
        i = order[oi]
        mx = mean2d[i, 0]
        my = mean2d[i, 1]
        ar = conic_raw[i, 0]
        br = conic_raw[i, 1]
        cr = conic_raw[i, 2]
        ab = conic_blend[i, 0]
        bb = conic_blend[i, 1]
        cb = conic_blend[i, 2]
        op = opacity[i]
        for y in range(y0[i], y1[i] + 1):
            dy = y - my
            for x in range(x0[i], x1[i] + 1):
                dx = x - mx
                q_raw = ar * dx * dx + 2.0 * br * dx * dy + cr * dy * dy
                if q_raw > FOOTPRINT_Q:
                    continue
                p = y * width + x
                cov_gauss[nc] = i
                cov_pix[nc] = p
                nc += 1
                q_b = ab * dx * dx + 2.0 * bb * dx * dy + cb * dy * dy
                a = op * np.exp(-0.5 * q_b)
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                if a < ALPHA_MIN:
                    continue
                rec_pix[nr] = p
                rec_gauss[nr] = i
                rec_alpha[nr] = a
                nr += 1
    return (cov_gauss[:nc].copy(), cov_pix[:nc].copy(),
            rec_pix[:nr].copy(), rec_gauss[:nr].copy(), rec_alpha[:nr].copy())


@numba.njit(cache=True)
def sort_records_by_pixel(rec_pix, rec_gauss, rec_alpha, n_pix):
    """Stable counting sort by pixel; preserves depth order within a pixel."""
    n = rec_pix.shape[0]
    counts = np.zeros(n_pix + 1, dtype=np.int64)
    for k in range(n):
        counts[rec_pix[k] + 1] += 1
    for p in range(n_pix):
        counts[p + 1] += counts[p]
    out_pix = np.empty(n, dtype=np.int32)
    out_gauss = np.empty(n, dtype=np.int32)
    out_alpha = np.empty(n, dtype=np.float64)
    cursor = counts[:n_pix].copy()
    for k in range(n):
        p = rec_pix[k]
        dst = cursor[p]
        cursor[p] += 1
        out_pix[dst] = p
        out_gauss[dst] = rec_gauss[k]
        out_alpha[dst] = rec_alpha[k]
    return out_pix, out_gauss, out_alpha


@numba.njit(cache=True)
def blend_forward(rec_pix, rec_gauss, rec_alpha, color, n_pix, background):
    """Front-to-back alpha blending over pixel-grouped records.

    A pixel's blend terminates once its transmittance drops below
    T_TERMINATE; later records stay recorded but frozen (rec_T < threshold),
    which the backward pass uses to skip them.
    """
    img = np.zeros((n_pix, 3), dtype=np.float64)
    T = np.ones(n_pix, dtype=np.float64)
    rec_T = np.empty(rec_pix.shape[0], dtype=np.float64)
    for k in range(rec_pix.shape[0]):
        p = rec_pix[k]
        t = T[p]
        rec_T[k] = t
        if t < T_TERMINATE:
            continue
        i = rec_gauss[k]
        a = rec_alpha[k]
        at = a * t
        img[p, 0] += color[i, 0] * at
        img[p, 1] += color[i, 1] * at
        img[p, 2] += color[i, 2] * at
        T[p] = t * (1.0 - a)
    for p in range(n_pix):
        img[p, 0] += background[0] * T[p]
        img[p, 1] += background[1] * T[p]
        img[p, 2] += background[2] * T[p]
    return img, T, rec_T


@numba.njit(cache=True)
def segment_max(indices, values, n_segments):
    """Per-segment maximum of values grouped by arbitrary indices.

    Segments with no entry get -inf.
    """
    out = np.full(n_segments, -np.inf, dtype=np.float64)
    for k in range(indices.shape[0]):
        i = indices[k]
        v = values[k]
        if v > out[i]:
            out[i] = v
    return out


@numba.njit(cache=True)
def blend_backward(rec_pix, rec_gauss, rec_alpha, rec_T,
                   mean2d, conic_blend, color, opacity,
                   d_img, T_final, background, n_gauss, width):
    """Reverse-walk gradients of the blended image.

    d_img is the (n_pix, 3) upstream gradient (already masked for the
    output clamp). Returns per-splat gradients in screen space:
    d_mean2d (N, 2), packed d_conic (N, 3), d_opacity_sigmoid (N,),
    d_color (N, 3).
    """
    d_mean2d = np.zeros((n_gauss, 2), dtype=np.float64)
    d_conic = np.zeros((n_gauss, 3), dtype=np.float64)
    d_opa = np.zeros(n_gauss, dtype=np.float64)
    d_color = np.zeros((n_gauss, 3), dtype=np.float64)
    n_pix = T_final.shape[0]
    # suffix blend S[p] = sum of contributions strictly behind the current
    # record, background included
    S = np.empty((n_pix, 3), dtype=np.float64)
    for p in range(n_pix):
        S[p, 0] = background[0] * T_final[p]
        S[p, 1] = background[1] * T_final[p]
        S[p, 2] = background[2] * T_final[p]
    for k in range(rec_pix.shape[0] - 1, -1, -1):
        t = rec_T[k]
        if t < T_TERMINATE:
            continue
        p = rec_pix[k]
        i = rec_gauss[k]
        a = rec_alpha[k]
        at = a * t
        g0 = d_img[p, 0]
        g1 = d_img[p, 1]
        g2 = d_img[p, 2]
        c0 = color[i, 0]
        c1 = color[i, 1]
        c2 = color[i, 2]
        d_color[i, 0] += g0 * at
        d_color[i, 1] += g1 * at
        d_color[i, 2] += g2 * at
        one_minus = 1.0 - a
        d_alpha = (g0 * (c0 * t - S[p, 0] / one_minus)
                   + g1 * (c1 * t - S[p, 1] / one_minus)
                   + g2 * (c2 * t - S[p, 2] / one_minus))
        S[p, 0] += c0 * at
        S[p, 1] += c1 * at
        S[p, 2] += c2 * at
        if a >= ALPHA_MAX:
            continue  # clamped: no gradient into alpha's parameters
        px = float(p % width)
        py = float(p // width)
        dx = px - mean2d[i, 0]
        dy = py - mean2d[i, 1]
        ca = conic_blend[i, 0]
        cb = conic_blend[i, 1]
        cc = conic_blend[i, 2]
        # d q/2 per displacement component
        gx = ca * dx + cb * dy
        gy = cb * dx + cc * dy
        d_q = -0.5 * a * d_alpha          # a = opacity * exp(-q/2)
        G = a / opacity[i]                # exp(-q/2), valid on the unclamped branch
        d_opa[i] += G * d_alpha
        d_mean2d[i, 0] += -2.0 * gx * d_q
        d_mean2d[i, 1] += -2.0 * gy * d_q
        d_conic[i, 0] += d_q * dx * dx
        d_conic[i, 1] += d_q * 2.0 * dx * dy
        d_conic[i, 2] += d_q * dy * dy
    return d_mean2d, d_conic, d_opa, d_color
