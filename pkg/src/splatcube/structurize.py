"""Arranging a Gaussian set into a voxel grid by optimal transport.

The assignment between splat positions and voxel centers minimizes the total
squared moving distance (a balanced linear assignment problem), solved
exactly by the Jonker-Volgenant algorithm or approximately by sorting both
point sets along a Morton curve and solving within matched contiguous
segments.  Assembled cubes store each position as the offset from its cell's
center; all other channels are copied verbatim.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError
from .gaussians import (
    Bounds, GaussianSet, CHANNELS, POS_SLICE, SCALE_SLICE, ROT_SLICE,
    OPACITY_INDEX, COLOR_SLICE,
)
from .lapjv import lap_solve
from .morton import morton_order

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VoxelGrid:
    """Uniform n_v^3 grid of cell centers, linearized x-fastest.

    Bounds and centers are snapped to single precision so that offsets of
    wire-precision positions reproduce those positions exactly in float64.
    """

    n_v: int
    bounds: Bounds
    centers: np.ndarray  # (n_v^3, 3)

    @classmethod
    def create(cls, n_v: int, bounds: Bounds) -> "VoxelGrid":
        if n_v < 1:
            raise DataError(f"n_v must be positive, got {n_v}")
        lo = np.asarray(bounds.lo, dtype=np.float32)
        hi = np.asarray(bounds.hi, dtype=np.float32)
        cell = (hi - lo) / np.float32(n_v)
        steps = (np.arange(n_v, dtype=np.float32) + np.float32(0.5))
        axes = [lo[d] + steps * cell[d] for d in range(3)]
        zc, yc, xc = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        centers = np.stack([xc.ravel(), yc.ravel(), zc.ravel()], axis=1)
        snapped = Bounds(lo.astype(np.float64), hi.astype(np.float64))
        return cls(n_v=n_v, bounds=snapped, centers=centers.astype(np.float64))

    def __len__(self):
        return self.n_v ** 3


@dataclass(frozen=True)
class TransportPlan:
    """Bijection from point index to voxel index with its squared-distance cost."""

    assignment: np.ndarray  # (N,) int64 permutation
    total_cost: float

    def __post_init__(self):
        object.__setattr__(self, "assignment",
                           np.asarray(self.assignment, dtype=np.int64))

    def is_bijection(self) -> bool:
        n = len(self.assignment)
        return bool(np.array_equal(np.sort(self.assignment), np.arange(n)))

    def inverse(self):
        """Voxel index -> point index."""
        inv = np.empty_like(self.assignment)
        inv[self.assignment] = np.arange(len(self.assignment))
        return inv


@dataclass
class GaussianCube:
    """n_v^3 grid of 14-channel splat features, position stored as cell offset."""

    n_v: int
    bounds: Bounds
    features: np.ndarray  # (n_v^3, 14), x-fastest cell order

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        expected = (self.n_v ** 3, CHANNELS)
        if self.features.shape != expected:
            raise DataError(
                f"cube features must have shape {expected}, got {self.features.shape}")

    def grid_view(self):
        """Features reshaped to (n_v, n_v, n_v, 14), indexed [iz, iy, ix]."""
        n = self.n_v
        return self.features.reshape(n, n, n, CHANNELS)


def distance_matrix(mus, centers):
    """Pairwise squared Euclidean distances, D[i, j] = ||mus[i] - centers[j]||^2."""
    mus = np.asarray(mus, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if mus.shape != centers.shape or mus.ndim != 2 or mus.shape[1] != 3:
        raise DataError(
            f"expected matching (N, 3) point sets, got {mus.shape} and {centers.shape}")
    if not (np.isfinite(mus).all() and np.isfinite(centers).all()):
        raise DataError("point coordinates must be finite")
    return cdist(mus, centers, metric="sqeuclidean")


def transport_cost(mus, centers, assignment) -> float:
    """Total squared distance of an assignment, summed in point-index order."""
    diff = np.asarray(mus, dtype=np.float64) - np.asarray(centers, dtype=np.float64)[assignment]
    return float(np.sum((diff * diff).sum(axis=1)))


def solve_lap_exact(dist) -> TransportPlan:
    """Optimal assignment for a full cost matrix (Jonker-Volgenant)."""
    dist = np.asarray(dist, dtype=np.float64)
    assignment, total = lap_solve(dist)
    return TransportPlan(assignment=assignment, total_cost=total)


def solve_lap_segmented(mus, centers, n_segments: int = 4) -> TransportPlan:
    """Approximate assignment via Morton-sorted contiguous segments.

    Both point sets are sorted by Morton code over their joint bounding box
    and cut into ``n_segments`` equal blocks; blocks are matched by rank and
    solved exactly.  Only the per-segment (N/k)^2 distance matrices are ever
    materialized.  The result is a global bijection whose cost is an upper
    bound on the exact optimum (equal when ``n_segments == 1``).
    """
    mus = np.asarray(mus, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if mus.shape != centers.shape or mus.ndim != 2 or mus.shape[1] != 3:
        raise DataError(
            f"expected matching (N, 3) point sets, got {mus.shape} and {centers.shape}")
    n = len(mus)
    if n_segments < 1:
        raise DataError(f"n_segments must be positive, got {n_segments}")
    if n % n_segments != 0:
        raise DataError(f"point count {n} not divisible by {n_segments} segments")

    lo = np.minimum(mus.min(axis=0), centers.min(axis=0))
    hi = np.maximum(mus.max(axis=0), centers.max(axis=0))
    mu_order = morton_order(mus, lo, hi)
    center_order = morton_order(centers, lo, hi)

    seg = n // n_segments
    assignment = np.empty(n, dtype=np.int64)
    for s in range(n_segments):
        rows = mu_order[s * seg:(s + 1) * seg]
        cols = center_order[s * seg:(s + 1) * seg]
        dist = cdist(mus[rows], centers[cols], metric="sqeuclidean")
        local, _ = lap_solve(dist)
        assignment[rows] = cols[local]
        del dist

    return TransportPlan(assignment=assignment,
                         total_cost=transport_cost(mus, centers, assignment))


def nearest_neighbor_plan(mus, centers) -> TransportPlan:
    """Greedy baseline: each point takes the nearest still-unused voxel center.

    Kept for comparison; ignores global structure, so stragglers can end up
    with arbitrarily long offsets.
    """
    mus = np.asarray(mus, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    n = len(mus)
    remaining = np.arange(n)
    assignment = np.empty(n, dtype=np.int64)
    for i in range(n):
        d = ((centers[remaining] - mus[i]) ** 2).sum(axis=1)
        pick = int(np.argmin(d))
        assignment[i] = remaining[pick]
        remaining = np.delete(remaining, pick)
    return TransportPlan(assignment=assignment,
                         total_cost=transport_cost(mus, centers, assignment))


def assemble_cube(gset: GaussianSet, grid: VoxelGrid, plan: TransportPlan) -> GaussianCube:
    """Arrange a set of exactly n_v^3 splats into a cube along a transport plan.

    Cell j receives the splat the plan maps to it, with its position replaced
    by the offset from the cell center.
    """
    n = len(grid)
    if len(gset) != n:
        raise DataError(f"set holds {len(gset)} Gaussians but grid has {n} cells")
    if len(plan.assignment) != n or not plan.is_bijection():
        raise DataError("transport plan is not a bijection over the grid size")
    source = plan.inverse()  # voxel j -> gaussian k
    features = np.empty((n, CHANNELS))
    features[:, POS_SLICE] = gset.mu[source] - grid.centers
    features[:, SCALE_SLICE] = gset.scale[source]
    features[:, ROT_SLICE] = gset.rot[source]
    features[:, OPACITY_INDEX] = gset.opacity[source]
    features[:, COLOR_SLICE] = gset.color[source]
    return GaussianCube(n_v=grid.n_v, bounds=grid.bounds, features=features)


def devoxelize(cube: GaussianCube, clamp_invalid: bool = True) -> GaussianSet:
    """Expand a cube back into a Gaussian set, one splat per cell in cell order.

    Positions are reconstructed as offset + cell center.  Out-of-range
    activated values are clamped (and reported); non-finite features raise.
    """
    feat = cube.features
    if not np.isfinite(feat).all():
        bad = int(np.argwhere(~np.isfinite(feat).all(axis=1))[0][0])
        raise DataError(f"non-finite features in cube cell {bad}")
    grid = VoxelGrid.create(cube.n_v, cube.bounds)
    mu = feat[:, POS_SLICE] + grid.centers
    scale = feat[:, SCALE_SLICE].copy()
    rot = feat[:, ROT_SLICE].copy()
    opacity = feat[:, OPACITY_INDEX].copy()
    color = feat[:, COLOR_SLICE].copy()

    if clamp_invalid:
        tiny = np.finfo(np.float32).tiny
        clamped = 0
        bad_scale = scale < tiny
        if bad_scale.any():
            scale[bad_scale] = tiny
            clamped += int(bad_scale.any(axis=1).sum())
        bad_opacity = (opacity < 0) | (opacity > 1)
        if bad_opacity.any():
            np.clip(opacity, 0.0, 1.0, out=opacity)
            clamped += int(bad_opacity.sum())
        bad_color = (color < 0) | (color > 1)
        if bad_color.any():
            np.clip(color, 0.0, 1.0, out=color)
            clamped += int(bad_color.any(axis=1).sum())
        norms = np.linalg.norm(rot, axis=1)
        degenerate = norms == 0
        if degenerate.any():
            rot[degenerate] = np.array([1.0, 0.0, 0.0, 0.0])
            norms[degenerate] = 1.0
            clamped += int(degenerate.sum())
        # Renormalize only clear violations so valid cubes round-trip bit-exactly.
        drifted = np.abs(norms - 1.0) > 1e-6
        if drifted.any():
            rot[drifted] /= norms[drifted, None]
            clamped += int(drifted.sum())
        if clamped:
            log.warning("devoxelize clamped invalid values in %d cells", clamped)

    return GaussianSet(mu, scale, rot, opacity, color, cube.bounds)


def structurize(gset: GaussianSet, n_v: int, n_segments: int = 4,
                exact: bool = False):
    """Pad-free pipeline step: assign a full set of n_v^3 splats to a grid.

    Returns ``(cube, plan, grid)``.  ``exact`` forces a single full-size
    Jonker-Volgenant solve regardless of ``n_segments``.
    """
    grid = VoxelGrid.create(n_v, gset.bounds)
    if len(gset) != len(grid):
        raise DataError(
            f"set holds {len(gset)} Gaussians but grid has {len(grid)} cells; pad first")
    if exact or n_segments == 1:
        plan = solve_lap_exact(distance_matrix(gset.mu, grid.centers))
    else:
        plan = solve_lap_segmented(gset.mu, grid.centers, n_segments)
    return assemble_cube(gset, grid, plan), plan, grid
