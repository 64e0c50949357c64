"""Image file IO: binary PPM (P6, 8-bit) always, PNG when Pillow is present."""

from __future__ import annotations

import numpy as np

from .core import ContractError


def quantize(img) -> np.ndarray:
    """Exact 0-255 quantization: round(255 * v) on clamped values."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * img).astype(np.uint8)


def write_ppm(img, path):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got {img.shape}")
    data = quantize(img)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM back into float64 [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise ContractError("not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ContractError("only 8-bit PPM is supported")
    pos += 1  # single whitespace after the header
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_png(img, path):
    try:
        from PIL import Image as PILImage
    except ImportError as exc:
        raise ContractError("PNG output requires Pillow") from exc
    PILImage.fromarray(quantize(img), mode="RGB").save(path)
