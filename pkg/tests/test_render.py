import json

import numpy as np
import pytest

from splatcube import (
    Bounds, Camera, Gaussian, GaussianSet, look_at,
    render, render_backward, project_gaussian,
)
from splatcube.errors import DataError
from conftest import random_fd_scene


def single_splat_set(mu=(0, 0, 0), scale=(0.3, 0.3, 0.3), opacity=1.0,
                     color=(1.0, 0.1, 0.1)):
    bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
    return GaussianSet(np.array([mu], dtype=float), np.array([scale], dtype=float),
                       np.array([[1.0, 0, 0, 0]]), np.array([opacity]),
                       np.array([color], dtype=float), bounds)


def frontal_camera(width=32, height=32, z=-2.0, fov=50.0):
    return look_at((0, 0, z), (0, 0, 0), width=width, height=height, fov_deg=fov)


class TestCamera:
    def test_json_round_trip(self):
        cam = frontal_camera()
        back = Camera.from_json(cam.to_json())
        assert back.fx == cam.fx and back.width == cam.width
        assert np.array_equal(back.world_to_camera, cam.world_to_camera)

    def test_invalid_focal(self):
        with pytest.raises(DataError):
            Camera(fx=-1, fy=1, cx=0, cy=0, width=8, height=8,
                   world_to_camera=np.eye(4))

    def test_non_orthonormal_rotation(self):
        m = np.eye(4)
        m[0, 0] = 2.0
        with pytest.raises(DataError):
            Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8, world_to_camera=m)

    def test_missing_json_keys(self):
        with pytest.raises(DataError, match="world_to_camera"):
            Camera.from_json(json.dumps({"fx": 1, "fy": 1, "cx": 0, "cy": 0,
                                         "width": 4, "height": 4}))


class TestRenderForward:
    def test_empty_set_is_background(self):
        bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
        gset = GaussianSet.empty(bounds)
        img = render(gset, frontal_camera(), background=(0.2, 0.4, 0.6))
        assert np.array_equal(img.pixels, np.broadcast_to([0.2, 0.4, 0.6], (32, 32, 3)))

    def test_single_opaque_splat_center_pixel(self):
        gset = single_splat_set(opacity=1.0, color=(0.9, 0.2, 0.1))
        cam = frontal_camera(width=64, height=64, z=-2.0)
        img = render(gset, cam).pixels
        center = img[32, 32]
        assert np.all(np.abs(center - np.array([0.9, 0.2, 0.1])) < 0.02)

    def test_zero_opacity_bit_equal(self):
        rng = np.random.default_rng(0)
        gset = random_fd_scene(rng, max_splats=4)
        cam = frontal_camera()
        base = render(gset, cam).pixels
        ghost = GaussianSet(
            np.vstack([gset.mu, [[0.05, 0.0, 0.1]]]),
            np.vstack([gset.scale, [[0.2, 0.2, 0.2]]]),
            np.vstack([gset.rot, [[1.0, 0, 0, 0]]]),
            np.concatenate([gset.opacity, [0.0]]),
            np.vstack([gset.color, [[0.5, 0.5, 0.5]]]), gset.bounds)
        assert np.array_equal(render(ghost, cam).pixels, base)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        gset = random_fd_scene(rng)
        cam = frontal_camera()
        assert np.array_equal(render(gset, cam).pixels, render(gset, cam).pixels)

    def test_pixels_in_range(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            gset = random_fd_scene(np.random.default_rng(seed))
            img = render(gset, frontal_camera()).pixels
            assert np.isfinite(img).all()
            assert img.min() >= 0.0 and img.max() <= 1.0 + 1e-6

    def test_behind_camera_skipped(self):
        gset = single_splat_set(mu=(0, 0, -5.0))  # behind a camera at z=-2 facing +z
        img = render(gset, frontal_camera(), background=(1, 1, 1)).pixels
        assert np.array_equal(img, np.ones((32, 32, 3)))

    def test_final_transmittance_observable_in_unit_range(self):
        # pixel = contributions + T_final * background, so rendering the same
        # scene over two backgrounds exposes T_final = diff / delta_bg
        rng = np.random.default_rng(6)
        gset = random_fd_scene(rng)
        cam = frontal_camera()
        dark = render(gset, cam, background=(0.0, 0.0, 0.0)).pixels
        light = render(gset, cam, background=(1.0, 1.0, 1.0)).pixels
        t_final = light - dark
        assert np.allclose(t_final, t_final[:, :, :1])  # same per channel
        assert t_final.min() >= -1e-12 and t_final.max() <= 1.0 + 1e-12

    def test_front_to_back_order(self):
        # nearer opaque splat must win over a farther one on the center pixel
        bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
        gset = GaussianSet(
            np.array([[0.0, 0.0, 0.5], [0.0, 0.0, -0.5]]),
            np.full((2, 3), 0.25),
            np.tile([1.0, 0, 0, 0], (2, 1)),
            np.array([1.0, 1.0]),
            np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]), bounds)
        img = render(gset, frontal_camera(width=64, height=64)).pixels
        center = img[32, 32]
        assert center[0] > 0.9 and center[1] < 0.1  # red (z=-0.5) is nearer


class TestProjectGaussian:
    def test_on_axis_projects_to_principal_point(self):
        g = Gaussian((0, 0, 0.5), (0.1, 0.1, 0.1), (1, 0, 0, 0), 1.0, (1, 1, 1))
        cam = frontal_camera(width=48, height=36)
        mean2d, cov2d, depth = project_gaussian(g, cam)
        assert mean2d == pytest.approx([cam.cx, cam.cy], abs=1e-9)
        assert depth == pytest.approx(2.5)
        assert np.allclose(cov2d, cov2d.T)

    def test_isotropic_covariance_scaling(self):
        sigma, z_eye = 0.08, -2.0
        g = Gaussian((0, 0, 0), (sigma,) * 3, (1, 0, 0, 0), 1.0, (1, 1, 1))
        cam = frontal_camera(z=z_eye)
        _, cov2d, depth = project_gaussian(g, cam, lowpass=0.0)
        expected = (cam.fx * sigma / depth) ** 2
        assert np.allclose(cov2d, np.diag([expected, expected]), rtol=1e-9, atol=1e-12)

    def test_doubling_depth_halves_projected_std(self):
        sigma = 0.05
        cam = frontal_camera(z=-1.0)
        g_near = Gaussian((0, 0, 0.0), (sigma,) * 3, (1, 0, 0, 0), 1.0, (1, 1, 1))
        g_far = Gaussian((0, 0, 1.0), (sigma,) * 3, (1, 0, 0, 0), 1.0, (1, 1, 1))
        _, cov_near, _ = project_gaussian(g_near, cam, lowpass=0.0)
        _, cov_far, _ = project_gaussian(g_far, cam, lowpass=0.0)
        assert np.sqrt(cov_near[0, 0]) == pytest.approx(2 * np.sqrt(cov_far[0, 0]), rel=1e-9)

    def test_behind_near_plane_not_visible(self):
        g = Gaussian((0, 0, -5.0), (0.1, 0.1, 0.1), (1, 0, 0, 0), 1.0, (1, 1, 1))
        assert project_gaussian(g, frontal_camera()) is None


class TestRenderBackwardBasics:
    def test_zero_loss_zero_grads(self):
        rng = np.random.default_rng(3)
        gset = random_fd_scene(rng)
        cam = frontal_camera(width=16, height=16)
        grads = render_backward(gset, cam, np.zeros((16, 16, 3)))
        for name in ("mu", "scale", "rot", "opacity", "color", "viewspace_grad_norm"):
            assert np.all(getattr(grads, name) == 0.0)

    def test_shape_mismatch_raises(self):
        rng = np.random.default_rng(4)
        gset = random_fd_scene(rng)
        with pytest.raises(DataError):
            render_backward(gset, frontal_camera(width=16, height=16),
                            np.zeros((8, 8, 3)))

    def test_offscreen_splat_gets_zero_grads(self):
        gset = single_splat_set(mu=(50.0, 0, 0), scale=(0.05, 0.05, 0.05))
        cam = frontal_camera(width=16, height=16)
        grads = render_backward(gset, cam, np.ones((16, 16, 3)))
        assert np.all(grads.mu == 0) and np.all(grads.scale == 0)
        assert grads.viewspace_grad_norm[0] == 0.0

    def test_viewspace_norm_nonnegative_and_shapes(self):
        rng = np.random.default_rng(5)
        gset = random_fd_scene(rng)
        cam = frontal_camera(width=16, height=16)
        grads = render_backward(gset, cam, rng.normal(size=(16, 16, 3)))
        assert grads.mu.shape == gset.mu.shape
        assert grads.rot.shape == gset.rot.shape
        assert np.all(grads.viewspace_grad_norm >= 0)
