"""Temporal uncertainty from ring buffers of pseudo-view renderings.

Each pseudo view owns a FIFO buffer of the last S renderings of the
exploring model. The per-pixel population standard deviation across the
buffer (averaged over color channels) is the raw uncertainty map; a k x k
box filter with replicate padding smooths it; the top r-quantile value
(floored at theta) of each smoothed map is that map's flagging threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from . import _kernels
from .core import ConfigError, ContractError


@dataclass
class RenderBuffer:
    """FIFO of at most `capacity` frames with strictly increasing stamps."""

    view_index: int
    capacity: int
    frames: list = field(default_factory=list)
    stamps: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    @property
    def full(self):
        return len(self.frames) >= self.capacity


def push_frame(buf: RenderBuffer, img, iteration) -> RenderBuffer:
    """Push a frame; evicts the oldest once the buffer holds `capacity`."""
    if buf.stamps and iteration <= buf.stamps[-1]:
        raise ContractError(
            f"buffer stamps must increase: got {iteration} after {buf.stamps[-1]}")
    buf.frames.append(np.asarray(img, dtype=np.float64))
    buf.stamps.append(int(iteration))
    while len(buf.frames) > buf.capacity:
        buf.frames.pop(0)
        buf.stamps.pop(0)
    return buf


def uncertainty_map(buf: RenderBuffer):
    """Per-pixel std across the buffered frames, averaged over channels.

    Returns None (not ready) while the buffer is underfull.
    """
    if not buf.full:
        return None
    stack = np.stack(buf.frames)                     # (S, H, W, 3)
    var = np.mean((stack - stack.mean(axis=0)) ** 2, axis=0)
    return np.sqrt(var).mean(axis=-1)                # (H, W)


def smooth_map(raw, k) -> np.ndarray:
    """k x k box average with replicate padding at the borders."""
    if k < 1 or k % 2 == 0:
        raise ConfigError("smoothing kernel size must be odd and positive")
    raw = np.asarray(raw, dtype=np.float64)
    return uniform_filter(raw, size=k, mode="nearest")


def compute_tau(smoothed, ratio_r, theta) -> float:
    """Descending-sort quantile threshold, floored at theta.

    tau = max(sorted[ceil(r * n)] (1-based), theta).
    """
    flat = np.asarray(smoothed, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ContractError("cannot threshold an empty map")
    order = np.sort(flat)[::-1]
    idx = int(np.ceil(ratio_r * flat.size))
    idx = min(max(idx, 1), flat.size)
    return float(max(order[idx - 1], theta))


@dataclass
class UncertaintyMap:
    """Raw and smoothed uncertainty for one pseudo view, with its threshold."""

    raw: np.ndarray
    smoothed: np.ndarray
    tau: float


def compute_uncertainty(buf: RenderBuffer, kernel_k, ratio_r, theta):
    """Full map pipeline for one buffer; None while the buffer is underfull."""
    raw = uncertainty_map(buf)
    if raw is None:
        return None
    smoothed = smooth_map(raw, kernel_k)
    return UncertaintyMap(raw=raw, smoothed=smoothed,
                          tau=compute_tau(smoothed, ratio_r, theta))


def flag_gaussians(cloud, maps, coverages, mode="or") -> np.ndarray:
    """Flag Gaussians whose covered pixels reach a map's threshold.

    `maps` and `coverages` are parallel per-pseudo-view lists; `coverages`
    entries are RenderOutput objects from the most recent renders of the
    same cloud. A Gaussian with no coverage anywhere is never flagged.
    ``mode`` aggregates per-view verdicts across views ("or" / "and").
    """
    if len(maps) != len(coverages):
        raise ContractError(f"{len(maps)} maps vs {len(coverages)} coverages")
    if mode not in ("or", "and"):
        raise ConfigError("flag mode must be 'or' or 'and'")
    n = len(cloud)
    flags = np.zeros(n, dtype=bool) if mode == "or" else np.ones(n, dtype=bool)
    for m, cov in zip(maps, coverages):
        values = m.smoothed.ravel()[cov.coverage_pix]
        per_gauss = _kernels.segment_max(
            cov.coverage_gauss.astype(np.int64),
            np.ascontiguousarray(values, dtype=np.float64), n)
        view_flags = per_gauss >= m.tau
        flags = (flags | view_flags) if mode == "or" else (flags & view_flags)
    return flags


def dump_uncertainty_map(m: UncertaintyMap, path_base):
    """Debug dump: normalized grayscale PGM plus the raw map as float32.

    Writes ``<path_base>.pgm`` (scaled by the map maximum) and
    ``<path_base>.f32`` (row-major raw values).
    """
    raw = np.asarray(m.raw, dtype=np.float64)
    peak = raw.max()
    scaled = raw / peak if peak > 0 else np.zeros_like(raw)
    data = np.round(255.0 * scaled).astype(np.uint8)
    h, w = raw.shape
    with open(f"{path_base}.pgm", "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())
    raw.astype("<f4").tofile(f"{path_base}.f32")
