"""Command-line pipeline: fit, voxelize, render, metrics, bench-lap.

Every stochastic step draws from one generator seeded by ``--seed``, so a
fixed seed and fixed inputs reproduce byte-identical outputs.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io as scio
from .camera import Camera
from .errors import ConfigError, DataError, NumericalError, SplatCubeError
from .fit import FitConfig, FitRunner
from .gaussians import Bounds, GaussianSet, pad_to
from .metrics import compare, psnr
from .render import render
from .structurize import (
    VoxelGrid, distance_matrix, solve_lap_exact, solve_lap_segmented,
    assemble_cube, devoxelize, transport_cost,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_FIT_CONFIG_KEYS = {
    "n_max": int, "iterations": int,
    "densify_interval": int, "densify_start": int, "densify_end": int,
    "grad_threshold": float, "prune_opacity": float,
    "prune_scale_fraction": float, "opacity_reset_interval": int,
    "init_count": int, "init_opacity": float,
    "lr_mu": float, "lr_mu_final": float, "lr_scale": float, "lr_rot": float,
    "lr_opacity": float, "lr_color": float,
    "ssim_weight": float, "first_phase": str,
}


def parse_fit_config(text: str) -> FitConfig:
    """Parse the ``key = value`` fit-config format (see docs/formats.md)."""
    cfg = FitConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "background":
            parts = value.split(",")
            if len(parts) != 3:
                raise ConfigError(f"config line {lineno}: background needs 3 components")
            cfg.background = tuple(float(p) for p in parts)
            continue
        if key not in _FIT_CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _FIT_CONFIG_KEYS[key](value))
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def _load_dataset(dataset_dir: Path):
    images_dir = dataset_dir / "images"
    cameras_dir = dataset_dir / "cameras"
    if not images_dir.is_dir():
        raise DataError(f"dataset is missing the images directory: {images_dir}")
    if not cameras_dir.is_dir():
        raise DataError(f"dataset is missing the cameras directory: {cameras_dir}")
    pairs = []
    for image_path in sorted(images_dir.glob("*.png")):
        cam_path = cameras_dir / (image_path.stem + ".json")
        if not cam_path.is_file():
            raise DataError(f"no camera file for image {image_path.name}: {cam_path}")
        cam = Camera.from_json(cam_path.read_text())
        pairs.append((image_path.stem, cam, scio.load_png(image_path)))
    if not pairs:
        raise DataError(f"no .png images found in {images_dir}")
    return pairs


def cmd_fit(args) -> int:
    dataset = _load_dataset(Path(args.dataset_dir))
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise DataError(f"config file not found: {cfg_path}")
    cfg = parse_fit_config(cfg_path.read_text())
    if args.iterations is not None:
        cfg.iterations = args.iterations
    rng = np.random.default_rng(args.seed)
    bounds = None
    if args.bounds is not None:
        lo, hi = args.bounds[:3], args.bounds[3:]
        bounds = Bounds(np.asarray(lo), np.asarray(hi))

    runner = FitRunner([(cam, pix) for _, cam, pix in dataset], cfg,
                       rng=rng, bounds=bounds)
    start = time.time()
    result = runner.run()
    elapsed = time.time() - start

    scio.save_splat_ply(result, args.out_ply)
    print(f"fitted {runner.fitted_count} Gaussians "
          f"(padded to {len(result)}) in {elapsed:.1f}s")
    print(f"{'view':>12s}  {'psnr_db':>9s}")
    for name, cam, pix in dataset:
        pred = render(result, cam, background=cfg.background)
        value = psnr(pred.pixels, pix)
        shown = "inf" if math.isinf(value) else f"{value:.3f}"
        print(f"{name:>12s}  {shown:>9s}")
    print(f"wrote {args.out_ply}")
    return EXIT_OK


def cmd_voxelize(args) -> int:
    gset = scio.load_splat_ply(args.in_ply)
    n_cells = args.nv ** 3
    if len(gset) > n_cells:
        raise DataError(
            f"{len(gset)} Gaussians exceed the {args.nv}^3 = {n_cells} grid cells")
    gset = pad_to(gset, n_cells)
    grid = VoxelGrid.create(args.nv, gset.bounds)
    if args.exact:
        plan = solve_lap_exact(distance_matrix(gset.mu, grid.centers))
    else:
        if n_cells % args.segments != 0:
            raise ConfigError(
                f"grid size {n_cells} not divisible by {args.segments} segments")
        plan = solve_lap_segmented(gset.mu, grid.centers, args.segments)
    cube = assemble_cube(gset, grid, plan)
    nbytes = scio.save_cube(cube, args.out_cube)
    offsets = np.linalg.norm(cube.features[:, :3], axis=1)
    print(f"total transport cost: {plan.total_cost:.6f}")
    print(f"mean offset norm: {float(offsets.mean()):.6f}")
    print(f"wrote {args.out_cube} ({nbytes} bytes)")
    return EXIT_OK


def _load_set_or_cube(path: Path) -> GaussianSet:
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == scio.CUBE_MAGIC:
        return devoxelize(scio.load_cube(path))
    return scio.load_splat_ply(path)


def cmd_render(args) -> int:
    in_path = Path(args.input)
    if not in_path.is_file():
        raise DataError(f"input not found: {in_path}")
    gset = _load_set_or_cube(in_path)
    cam_path = Path(args.camera_json)
    if not cam_path.is_file():
        raise DataError(f"camera file not found: {cam_path}")
    cam = Camera.from_json(cam_path.read_text())
    background = tuple(args.background) if args.background else (1.0, 1.0, 1.0)
    image = render(gset, cam, background=background)
    scio.save_png(image.pixels, args.out_png)
    print(f"wrote {args.out_png}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    img_a = scio.load_png(args.image_a)
    img_b = scio.load_png(args.image_b)
    report = compare(img_a, img_b)
    print(json.dumps(report.to_json_dict()))
    return EXIT_OK


def cmd_bench_lap(args) -> int:
    rng = np.random.default_rng(args.seed)
    n = args.n
    if n < 1:
        raise ConfigError("--n must be positive")
    n_v = math.ceil(n ** (1.0 / 3.0))
    bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
    centers = VoxelGrid.create(n_v, bounds).centers[:n]
    points = rng.uniform(-1.0, 1.0, (n, 3))

    if n % args.segments != 0:
        raise ConfigError(f"--n {n} not divisible by --segments {args.segments}")
    start = time.time()
    plan = solve_lap_segmented(points, centers, args.segments)
    seg_time = time.time() - start
    print(f"segmented({args.segments}): cost {plan.total_cost:.6f} "
          f"in {seg_time:.3f}s (bijection: {plan.is_bijection()})")

    if n <= 2048:
        start = time.time()
        exact = solve_lap_exact(distance_matrix(points, centers))
        exact_time = time.time() - start
        exact_cost = transport_cost(points, centers, exact.assignment)
        ratio = plan.total_cost / exact_cost if exact_cost > 0 else 1.0
        print(f"exact: cost {exact_cost:.6f} in {exact_time:.3f}s")
        print(f"cost ratio segmented/exact: {ratio:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatcube",
        description="Fit splats to posed images and structure them into voxel-grid cubes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a Gaussian set to a posed-image dataset")
    p.add_argument("dataset_dir", help="directory with images/*.png and cameras/*.json")
    p.add_argument("config", help="fit config file (key = value lines)")
    p.add_argument("out_ply", help="output splat PLY path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=None,
                   help="override the config iteration count")
    p.add_argument("--bounds", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                   default=None, help="scene bounds (default [-1,1]^3)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("voxelize", help="arrange a splat PLY into a cube file")
    p.add_argument("in_ply")
    p.add_argument("out_cube")
    p.add_argument("--nv", type=int, default=32, help="grid cells per axis")
    p.add_argument("--segments", type=int, default=4)
    p.add_argument("--exact", action="store_true",
                   help="solve the full assignment instead of the segmented approximation")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("render", help="render a cube or PLY from a camera")
    p.add_argument("input", help=".gcub cube or splat .ply")
    p.add_argument("camera_json")
    p.add_argument("out_png")
    p.add_argument("--background", type=float, nargs=3, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two PNGs, printed as JSON")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench-lap", help="time the assignment solvers on random points")
    p.add_argument("--n", type=int, default=720)
    p.add_argument("--segments", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_lap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SplatCubeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
