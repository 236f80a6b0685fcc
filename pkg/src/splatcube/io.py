"""Serialization: GCUB cube files, splat point-cloud PLY, PNG images.

Both binary formats are little-endian single precision and are documented
byte-exactly in docs/formats.md.
"""

from __future__ import annotations

import logging
import struct
from typing import BinaryIO

import numpy as np
from PIL import Image

from .errors import ParseError, DataError
from .gaussians import Bounds, GaussianSet, CHANNELS
from .structurize import GaussianCube

log = logging.getLogger(__name__)

CUBE_MAGIC = b"GCUB"
CUBE_VERSION = 1
_HEADER = struct.Struct("<4sIII6f")  # magic, version, n_v, channels, bounds

SH_C0 = 0.28209479177387814  # Y_0^0; maps the DC coefficient to linear color
_OPACITY_EPS = 1e-6

PLY_REQUIRED = ("x", "y", "z",
                "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3",
                "opacity",
                "f_dc_0", "f_dc_1", "f_dc_2")

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# GCUB cube files

def write_cube(cube: GaussianCube, sink: BinaryIO) -> int:
    """Write a cube; returns the number of bytes emitted."""
    header = _HEADER.pack(
        CUBE_MAGIC, CUBE_VERSION, cube.n_v, CHANNELS,
        *np.asarray(cube.bounds.lo, dtype=np.float32),
        *np.asarray(cube.bounds.hi, dtype=np.float32),
    )
    payload = np.ascontiguousarray(cube.features, dtype="<f4").tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_cube(source: BinaryIO) -> GaussianCube:
    raw = source.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ParseError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(raw)}", offset=0)
    magic, version, n_v, channels, *bounds6 = _HEADER.unpack(raw)
    if magic != CUBE_MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {CUBE_MAGIC!r}", offset=0)
    if version != CUBE_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if n_v < 1:
        raise ParseError(f"invalid grid size {n_v}", offset=8)
    if channels != CHANNELS:
        raise ParseError(
            f"expected {CHANNELS} channels for version {CUBE_VERSION}, got {channels}",
            offset=12)
    expected = n_v ** 3 * channels * 4
    payload = source.read(expected)
    if len(payload) != expected:
        raise ParseError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            offset=_HEADER.size)
    lo = np.asarray(bounds6[:3], dtype=np.float64)
    hi = np.asarray(bounds6[3:], dtype=np.float64)
    try:
        bounds = Bounds(lo, hi)
    except ValueError as exc:
        raise ParseError(f"invalid bounds: {exc}", offset=16) from exc
    features = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return GaussianCube(n_v=n_v, bounds=bounds,
                        features=features.reshape(n_v ** 3, channels))


def save_cube(cube: GaussianCube, path) -> int:
    with open(path, "wb") as handle:
        return write_cube(cube, handle)


def load_cube(path) -> GaussianCube:
    with open(path, "rb") as handle:
        return read_cube(handle)


# ---------------------------------------------------------------------------
# Splat PLY interop

def _parse_ply_header(source: BinaryIO):
    def next_line():
        line = b""
        while True:
            ch = source.read(1)
            if not ch:
                raise ParseError("unexpected end of file inside PLY header")
            if ch == b"\n":
                return line.decode("ascii", errors="replace").strip()
            line += ch

    if next_line() != "ply":
        raise ParseError("not a PLY file (missing 'ply' signature)", offset=0)
    fmt = next_line()
    if fmt != "format binary_little_endian 1.0":
        raise ParseError(f"unsupported PLY format line: {fmt!r}")

    count = None
    fields = []
    in_vertex = False
    while True:
        line = next_line()
        if line == "end_header":
            break
        if line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "element":
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                if count is None:
                    raise ParseError(f"element {parts[1]!r} precedes vertex element")
                in_vertex = False
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if parts[1] == "list":
                raise ParseError("list properties are not supported on vertices")
            kind = _PLY_TYPES.get(parts[1])
            if kind is None:
                raise ParseError(f"unsupported property type {parts[1]!r}")
            fields.append((parts[2], "<" + kind))
    if count is None:
        raise ParseError("PLY header has no vertex element")
    return count, fields


def import_splat_ply(source: BinaryIO) -> GaussianSet:
    """Read a fitted-splat point cloud and apply the stored activations.

    Scales are stored in log space, opacity as a logit, and color as the
    spherical-harmonics DC coefficient; extra properties are ignored.
    """
    count, fields = _parse_ply_header(source)
    names = [name for name, _ in fields]
    missing = [p for p in PLY_REQUIRED if p not in names]
    if missing:
        raise ParseError(f"PLY vertex element missing required properties: "
                         f"{', '.join(missing)}")
    dtype = np.dtype(fields)
    raw = source.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise ParseError(
            f"truncated vertex data: expected {dtype.itemsize * count} bytes, "
            f"got {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype)

    mu = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    scale = np.exp(np.stack([data[f"scale_{i}"] for i in range(3)], axis=1)
                   .astype(np.float64))
    rot = np.stack([data[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    norms = np.linalg.norm(rot, axis=1)
    zero = norms == 0
    if zero.any():
        log.warning("import_splat_ply: %d zero quaternions replaced by identity",
                    int(zero.sum()))
        rot[zero] = np.array([1.0, 0.0, 0.0, 0.0])
        norms[zero] = 1.0
    rot = rot / norms[:, None]
    opacity = 1.0 / (1.0 + np.exp(-data["opacity"].astype(np.float64)))
    dc = np.stack([data[f"f_dc_{i}"] for i in range(3)], axis=1).astype(np.float64)
    color = np.clip(dc * SH_C0 + 0.5, 0.0, 1.0)

    # Emit wire-precision values so downstream single-float storage (cube
    # payloads) reproduces the activated parameters bit-exactly.
    gset = GaussianSet(mu, scale, rot, opacity, color, _bounds_from_positions(mu))
    return gset.snapped_to_wire()


def _bounds_from_positions(mu):
    if len(mu) == 0:
        return Bounds(np.full(3, -1.0), np.full(3, 1.0))
    lo = mu.min(axis=0)
    hi = mu.max(axis=0)
    margin = np.maximum(0.01 * (hi - lo), 1e-3)
    return Bounds(lo - margin, hi + margin)


def export_splat_ply(gset: GaussianSet, sink: BinaryIO) -> int:
    """Write the inverse mapping of :func:`import_splat_ply`.

    Opacities at exactly 0 or 1 are clamped into (eps, 1-eps) before the
    logit; everything is stored as little-endian single floats.
    """
    n = len(gset)
    props = ["x", "y", "z", "nx", "ny", "nz",
             "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2",
             "rot_0", "rot_1", "rot_2", "rot_3"]
    header = "ply\nformat binary_little_endian 1.0\n"
    header += f"element vertex {n}\n"
    header += "".join(f"property float {p}\n" for p in props)
    header += "end_header\n"

    data = np.zeros((n, len(props)), dtype="<f4")
    data[:, 0:3] = gset.mu
    data[:, 6:9] = (gset.color - 0.5) / SH_C0
    opacity = np.clip(gset.opacity, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    data[:, 9] = np.log(opacity / (1.0 - opacity))
    data[:, 10:13] = np.log(gset.scale)
    data[:, 13:17] = gset.rot

    encoded = header.encode("ascii")
    sink.write(encoded)
    sink.write(data.tobytes())
    return len(encoded) + data.nbytes


def save_splat_ply(gset: GaussianSet, path) -> int:
    with open(path, "wb") as handle:
        return export_splat_ply(gset, handle)


def load_splat_ply(path) -> GaussianSet:
    with open(path, "rb") as handle:
        return import_splat_ply(handle)


# ---------------------------------------------------------------------------
# PNG images

def save_png(pixels, path):
    """Clamp [0, 1] pixels and write an 8-bit PNG (values taken as sRGB-encoded)."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) pixels, got shape {arr.shape}")
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_png(path):
    """Read a PNG into float64 (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read PNG {path}: {exc}") from exc
    return data / 255.0
