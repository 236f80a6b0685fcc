"""Shared fixtures: the synthetic fitting scene and gradient-check helpers."""

import time

import numpy as np
import pytest

import importlib

from splatcube import GaussianSet, Bounds, look_at, render, psnr
from splatcube.fit import FitConfig, FitRunner

render_mod = importlib.import_module("splatcube.render")


def make_gt_scene() -> GaussianSet:
    """Three anisotropic splats used as renderable ground truth."""
    bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
    mu = np.array([[0.25, 0.1, 0.0], [-0.3, -0.15, 0.2], [0.0, 0.25, -0.25]])
    scale = np.array([[0.28, 0.17, 0.12], [0.14, 0.30, 0.18], [0.20, 0.13, 0.26]])
    rot = np.array([[0.9, 0.1, 0.3, 0.2], [0.8, -0.4, 0.2, 0.1], [1.0, 0.2, -0.2, 0.3]])
    rot = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    opacity = np.array([0.9, 0.85, 0.8])
    color = np.array([[0.85, 0.2, 0.15], [0.15, 0.65, 0.85], [0.9, 0.8, 0.2]])
    return GaussianSet(mu, scale, rot, opacity, color, bounds)


def make_ring_cameras(count=8, width=64, height=64):
    cams = []
    for i in range(count):
        ang = 2 * np.pi * i / count
        eye = (2.6 * np.sin(ang), 0.9 * np.cos(2 * ang + 0.4), 2.6 * np.cos(ang))
        cams.append(look_at(eye, (0, 0, 0), width=width, height=height, fov_deg=45))
    return cams


def held_out_camera(width=64, height=64):
    return look_at((1.7, 1.6, 1.7), (0, 0, 0), width=width, height=height, fov_deg=45)


def fixture_fit_config(iterations=2000) -> FitConfig:
    return FitConfig(
        n_max=64, iterations=iterations,
        densify_interval=100, densify_start=300, densify_end=1200,
        grad_threshold=1e-5, prune_opacity=0.01, opacity_reset_interval=100000,
        init_count=12, lr_mu=3e-3, lr_mu_final=3e-5, lr_scale=5e-3,
        lr_rot=2e-3, lr_opacity=5e-2, lr_color=2.5e-2, ssim_weight=0.2,
    )


@pytest.fixture(scope="session")
def synthetic_fit():
    """One full synthetic fit shared by the fit tests and the acceptance suite."""
    gt = make_gt_scene()
    cams = make_ring_cameras()
    train = [(cam, render(gt, cam).pixels) for cam in cams]
    held_cam = held_out_camera()
    held_gt = render(gt, held_cam).pixels

    cfg = fixture_fit_config()
    runner = FitRunner(train, cfg, rng=np.random.default_rng(11))
    start = time.time()
    result = runner.run()
    elapsed = time.time() - start
    held_psnr = psnr(render(result, held_cam, background=cfg.background).pixels, held_gt)
    return {
        "gt": gt, "train": train, "held_cam": held_cam, "held_gt": held_gt,
        "cfg": cfg, "runner": runner, "result": result,
        "elapsed": elapsed, "held_psnr": held_psnr,
    }


# ---------------------------------------------------------------------------
# Gradient checking.  Finite differences are only a valid derivative estimate
# where the rasterizer's hard gates (3-sigma ellipse, alpha cutoff, saturation
# stop, depth sort, frustum clamp) do not flip within the probe step, so
# scenes are drawn from a seeded stream and kept only when every probe leaves
# the gate decisions untouched.

FD_STEP = 1e-4


def gate_signature(gset, cam, background):
    proj = render_mod._Projection(gset, cam, render_mod.DEFAULT_NEAR, render_mod.LOWPASS)
    bg = np.asarray(background, dtype=np.float64)
    _, _, records = render_mod._forward(gset, cam, proj, bg, record=True)
    parts = [proj.clamped_x.tobytes() + proj.clamped_y.tobytes(),
             render_mod._draw_order(proj, gset.opacity).tobytes()]
    for k, x0, x1, y0, y1, t_before in records:
        _, _, _, _, alpha, inside = render_mod._splat_alpha(
            proj, k, x0, x1, y0, y1, gset.opacity)
        active = inside & (t_before > render_mod.T_MIN)
        clamped = active & (alpha >= render_mod.ALPHA_MAX)
        parts.append((k, x0, x1, y0, y1, active.tobytes(), clamped.tobytes()))
    return tuple(parts)


def random_fd_scene(rng, max_splats=5):
    n = int(rng.integers(2, max_splats + 1))
    bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
    mu = rng.uniform(-0.4, 0.4, (n, 3))
    scale = rng.uniform(0.08, 0.25, (n, 3))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    opacity = rng.uniform(0.3, 0.85, n)
    color = rng.uniform(0.1, 0.9, (n, 3))
    return GaussianSet(mu, scale, rot, opacity, color, bounds)


def fd_gradients_if_gate_stable(gset, cam, weights, background=(1.0, 1.0, 1.0)):
    """Central finite differences for all parameters, or None if a probe flips a gate."""
    base_sig = gate_signature(gset, cam, background)

    def loss():
        return float(np.sum(weights * render(gset, cam, background=background).pixels))

    fd = {}
    for name in ("mu", "scale", "rot", "opacity", "color"):
        param = getattr(gset, name)
        grad = np.zeros_like(param)
        flat, gflat = param.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            if gate_signature(gset, cam, background) != base_sig:
                flat[i] = orig
                return None
            up = loss()
            flat[i] = orig - FD_STEP
            if gate_signature(gset, cam, background) != base_sig:
                flat[i] = orig
                return None
            down = loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * FD_STEP)
        fd[name] = grad
    return fd


def relative_error(analytic, numeric, floor=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())
