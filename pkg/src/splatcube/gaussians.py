"""Anisotropic 3D Gaussian primitives.

A splat is parameterized by its center ``mu``, a per-axis scale vector, a
unit quaternion (w, x, y, z order), an opacity in [0, 1] and an RGB color in
[0, 1].  Scale and opacity are stored *activated* (positive / in range) so a
set is always renderer-ready; optimizers keep their own raw parameterization.

Flattened, one Gaussian is a 14-channel feature vector in the order
[position(3), scale(3), rotation wxyz(4), opacity(1), color(3)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidRotationError,
    InvalidScaleError,
    DegenerateCovarianceError,
    OverfullSetError,
)

# Feature-vector layout shared with the voxel-grid representation.
CHANNELS = 14
POS_SLICE = slice(0, 3)
SCALE_SLICE = slice(3, 6)
ROT_SLICE = slice(6, 10)
OPACITY_INDEX = 10
COLOR_SLICE = slice(11, 14)

# Condition-number cap for density evaluation (ratio of extreme eigenvalues).
CONDITION_CAP = 1e8

# Scale assigned to padding splats: smallest positive normal float32, so the
# value survives wire-format (single precision) round trips bit-exactly.
PAD_SCALE = float(np.finfo(np.float32).tiny)


def wire_precision(values):
    """Round to the nearest single-precision value (kept as float64).

    The on-disk formats store single floats; snapping parameters to that grid
    makes serialization and voxelization round-trip without drift.
    """
    return np.asarray(values, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box, ``lo < hi`` componentwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"bounds.lo must be < bounds.hi componentwise, got {lo} vs {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self):
        """Diagonal length of the box."""
        return float(np.linalg.norm(self.hi - self.lo))


@dataclass
class Gaussian:
    """A single splat with activated parameters."""

    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(4)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        self.opacity = float(self.opacity)

    def as_vector(self):
        """Flatten to the canonical 14-channel layout."""
        vec = np.empty(CHANNELS)
        vec[POS_SLICE] = self.mu
        vec[SCALE_SLICE] = self.scale
        vec[ROT_SLICE] = self.rot
        vec[OPACITY_INDEX] = self.opacity
        vec[COLOR_SLICE] = self.color
        return vec


class GaussianSet:
    """Ordered collection of Gaussians stored as packed arrays.

    Order is stable: no operation reorders entries except voxel-grid assembly,
    which documents its permutation through the transport plan.
    """

    def __init__(self, mu, scale, rot, opacity, color, bounds: Bounds):
        self.mu = np.ascontiguousarray(mu, dtype=np.float64).reshape(-1, 3)
        n = len(self.mu)
        self.scale = np.ascontiguousarray(scale, dtype=np.float64).reshape(n, 3)
        self.rot = np.ascontiguousarray(rot, dtype=np.float64).reshape(n, 4)
        self.opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(n)
        self.color = np.ascontiguousarray(color, dtype=np.float64).reshape(n, 3)
        self.bounds = bounds

    @classmethod
    def empty(cls, bounds: Bounds) -> "GaussianSet":
        z = np.zeros((0, 3))
        return cls(z, z, np.zeros((0, 4)), np.zeros(0), z, bounds)

    def __len__(self):
        return len(self.mu)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], self.scale[i], self.rot[i], self.opacity[i], self.color[i])

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.mu.copy(), self.scale.copy(), self.rot.copy(),
            self.opacity.copy(), self.color.copy(), self.bounds,
        )

    def validate(self, atol=1e-6):
        """Check the stored-parameter invariants; raises ValueError on failure."""
        for name in ("mu", "scale", "rot", "opacity", "color"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in {name}")
        if len(self) and not np.all(self.scale > 0):
            raise InvalidScaleError("scale components must be strictly positive")
        if len(self) and not np.all((self.opacity >= 0) & (self.opacity <= 1)):
            raise ValueError("opacity must lie in [0, 1]")
        norms = np.linalg.norm(self.rot, axis=1)
        if len(self) and not np.allclose(norms, 1.0, atol=atol):
            raise InvalidRotationError("rotation quaternions must be unit length")

    def features(self):
        """(N, 14) feature matrix in the canonical channel order."""
        feat = np.empty((len(self), CHANNELS))
        feat[:, POS_SLICE] = self.mu
        feat[:, SCALE_SLICE] = self.scale
        feat[:, ROT_SLICE] = self.rot
        feat[:, OPACITY_INDEX] = self.opacity
        feat[:, COLOR_SLICE] = self.color
        return feat

    @classmethod
    def from_features(cls, feat, bounds: Bounds) -> "GaussianSet":
        feat = np.asarray(feat, dtype=np.float64)
        if feat.ndim != 2 or feat.shape[1] != CHANNELS:
            raise ValueError(f"expected (N, {CHANNELS}) features, got {feat.shape}")
        return cls(
            feat[:, POS_SLICE], feat[:, SCALE_SLICE], feat[:, ROT_SLICE],
            feat[:, OPACITY_INDEX], feat[:, COLOR_SLICE], bounds,
        )

    def snapped_to_wire(self) -> "GaussianSet":
        """Copy with every parameter rounded to single precision."""
        out = GaussianSet(
            wire_precision(self.mu), wire_precision(self.scale),
            wire_precision(self.rot), wire_precision(self.opacity),
            wire_precision(self.color), self.bounds,
        )
        return out


def normalize_quaternion(rot):
    """Normalize quaternion(s) to unit length; raises on zero/non-finite input."""
    rot = np.asarray(rot, dtype=np.float64)
    if not np.isfinite(rot).all():
        raise InvalidRotationError("quaternion has non-finite components")
    norm = np.linalg.norm(rot, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise InvalidRotationError("zero quaternion cannot represent a rotation")
    return rot / norm


def quaternion_to_matrix(rot):
    """Rotation matrix/matrices for unit quaternion(s) in (w, x, y, z) order.

    Accepts shape (4,) or (N, 4); returns (3, 3) or (N, 3, 3).
    """
    q = np.asarray(rot, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m[0] if single else m


def covariance(rot, scale):
    """Covariance matrix R diag(s)^2 R^T from quaternion and scale.

    Accepts single (4,), (3,) inputs or batched (N, 4), (N, 3); the rotation
    is normalized internally.  The result is symmetric positive-definite with
    eigenvalues equal to the squared scales.
    """
    scale = np.asarray(scale, dtype=np.float64)
    if not np.isfinite(scale).all() or np.any(scale <= 0):
        raise InvalidScaleError(f"scale must be strictly positive, got {scale}")
    rotmat = quaternion_to_matrix(normalize_quaternion(rot))
    if rotmat.ndim == 2:
        rs = rotmat * scale[None, :]
    else:
        rs = rotmat * scale[:, None, :]
    return rs @ np.swapaxes(rs, -1, -2)


def eval_density(g: Gaussian, x, condition_cap: float = CONDITION_CAP) -> float:
    """Unnormalized Gaussian density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).

    Equals 1 exactly at ``x == mu``.  Raises ``DegenerateCovarianceError``
    when the covariance condition number exceeds ``condition_cap``.
    """
    scale = np.asarray(g.scale, dtype=np.float64)
    if not np.isfinite(scale).all() or np.any(scale <= 0):
        raise InvalidScaleError(f"scale must be strictly positive, got {scale}")
    cond = (scale.max() / scale.min()) ** 2
    if cond > condition_cap:
        raise DegenerateCovarianceError(
            f"covariance condition number {cond:.3g} exceeds cap {condition_cap:.3g}"
        )
    rotmat = quaternion_to_matrix(normalize_quaternion(g.rot))
    local = rotmat.T @ (np.asarray(x, dtype=np.float64).reshape(3) - g.mu)
    m = float(np.sum((local / scale) ** 2))
    return float(np.exp(-0.5 * m))


def pad_to(gset: GaussianSet, n_target: int) -> GaussianSet:
    """Append zero-opacity splats until the set holds exactly ``n_target``.

    Padding splats sit at the bounds center with minimal positive scale,
    identity rotation and zero color; with opacity exactly 0 they contribute
    nothing to any render.  The first ``len(gset)`` entries are untouched.
    """
    if n_target < 1:
        raise ValueError(f"n_target must be positive, got {n_target}")
    n = len(gset)
    if n > n_target:
        raise OverfullSetError(f"set of {n} Gaussians exceeds target count {n_target}")
    if n == n_target:
        return gset.copy()
    k = n_target - n
    center = wire_precision(gset.bounds.center)
    pad_mu = np.tile(center, (k, 1))
    pad_scale = np.full((k, 3), PAD_SCALE)
    pad_rot = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (k, 1))
    pad_opacity = np.zeros(k)
    pad_color = np.zeros((k, 3))
    return GaussianSet(
        np.vstack([gset.mu, pad_mu]),
        np.vstack([gset.scale, pad_scale]),
        np.vstack([gset.rot, pad_rot]),
        np.concatenate([gset.opacity, pad_opacity]),
        np.vstack([gset.color, pad_color]),
        gset.bounds,
    )
