"""splatcube: fixed-budget Gaussian splat fitting and voxel-grid structuralization.

The pipeline fits a capped number of 3D Gaussians to posed images, arranges
them into an N^3 voxel grid by solving the optimal-transport assignment
between splat positions and cell centers, and serializes the result; forward
diffusion utilities operate on the gridded features.
"""

from .gaussians import (
    CHANNELS, Bounds, Gaussian, GaussianSet,
    covariance, eval_density, pad_to, wire_precision,
)
from .camera import Camera, look_at
from .render import (
    RenderedImage, GaussianGradients,
    render, render_backward, project_gaussian,
)
from .metrics import MetricReport, psnr, ssim, ssim_with_gradient, compare
from .structurize import (
    VoxelGrid, TransportPlan, GaussianCube,
    distance_matrix, transport_cost, solve_lap_exact, solve_lap_segmented,
    nearest_neighbor_plan, assemble_cube, devoxelize, structurize,
)
from .lapjv import lap_solve
from .morton import morton_codes, morton_order
from .io import (
    write_cube, read_cube, save_cube, load_cube,
    import_splat_ply, export_splat_ply, save_splat_ply, load_splat_ply,
    save_png, load_png,
)
from .fit import (
    FitConfig, FitState, FitRunner, DensifyEvent, PruneEvent,
    fit, densify_constrained, prune, initialize_state,
)
from .diffusion import (
    NoiseSchedule, AdaGNParams, cosine_schedule, forward_noise, adagn,
)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "CHANNELS", "Bounds", "Gaussian", "GaussianSet",
    "covariance", "eval_density", "pad_to", "wire_precision",
    "Camera", "look_at",
    "RenderedImage", "GaussianGradients",
    "render", "render_backward", "project_gaussian",
    "MetricReport", "psnr", "ssim", "ssim_with_gradient", "compare",
    "VoxelGrid", "TransportPlan", "GaussianCube",
    "distance_matrix", "transport_cost", "solve_lap_exact", "solve_lap_segmented",
    "nearest_neighbor_plan", "assemble_cube", "devoxelize", "structurize",
    "lap_solve", "morton_codes", "morton_order",
    "write_cube", "read_cube", "save_cube", "load_cube",
    "import_splat_ply", "export_splat_ply", "save_splat_ply", "load_splat_ply",
    "save_png", "load_png",
    "FitConfig", "FitState", "FitRunner", "DensifyEvent", "PruneEvent",
    "fit", "densify_constrained", "prune", "initialize_state",
    "NoiseSchedule", "AdaGNParams", "cosine_schedule", "forward_noise", "adagn",
    "errors",
]
