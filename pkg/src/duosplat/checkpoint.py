"""Model checkpoints: binary little-endian PLY, one vertex per Gaussian.

Vertex properties (all float32, in order): x, y, z, rot_w, rot_x, rot_y,
rot_z, log_scale_0..2, opacity_logit, sh_0..11. The 12 SH values are the
(3, 4) coefficient block in row-major channel order. Round trips of the
float32 payload are bit-exact.
"""

from __future__ import annotations

import numpy as np

from .core import ContractError, GaussianCloud

PLY_PROPERTIES = (
    ["x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z"]
    + [f"log_scale_{i}" for i in range(3)]
    + ["opacity_logit"]
    + [f"sh_{i}" for i in range(12)]
)


def cloud_to_float32(cloud: GaussianCloud) -> np.ndarray:
    n = len(cloud)
    out = np.empty((n, len(PLY_PROPERTIES)), dtype="<f4")
    out[:, 0:3] = cloud.mu
    out[:, 3:7] = cloud.rot
    out[:, 7:10] = cloud.log_scale
    out[:, 10] = cloud.opacity_logit
    out[:, 11:23] = cloud.sh.reshape(n, 12)
    return out


def cloud_from_float32(data: np.ndarray, step=0) -> GaussianCloud:
    data = np.asarray(data, dtype=np.float64)
    return GaussianCloud(mu=data[:, 0:3], rot=data[:, 3:7],
                         log_scale=data[:, 7:10], opacity_logit=data[:, 10],
                         sh=data[:, 11:23].reshape(-1, 3, 4), step=step)


def save_ply(cloud: GaussianCloud, path):
    data = cloud_to_float32(cloud)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"end_header\n"
    idx = blob.find(marker)
    if idx < 0:
        raise ContractError("not a PLY file (missing end_header)")
    header_lines = blob[:idx].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0].strip() != "ply":
        raise ContractError("not a PLY file")
    if "format binary_little_endian 1.0" not in (l.strip() for l in header_lines):
        raise ContractError("checkpoint PLY must be binary little-endian 1.0")
    n = None
    props = []
    for line in header_lines:
        parts = line.strip().split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            if parts[1] != "float":
                raise ContractError(f"unsupported property type {parts[1]!r}")
            props.append(parts[2])
    if n is None:
        raise ContractError("PLY header lacks a vertex element")
    if props != PLY_PROPERTIES:
        raise ContractError("PLY vertex properties do not match the checkpoint schema")
    payload = blob[idx + len(marker):]
    expected = n * len(PLY_PROPERTIES) * 4
    if len(payload) < expected:
        raise ContractError("PLY payload truncated")
    data = np.frombuffer(payload, dtype="<f4", count=n * len(PLY_PROPERTIES))
    return cloud_from_float32(data.reshape(n, len(PLY_PROPERTIES)))
