import numpy as np
import pytest

from splatcube import (
    CHANNELS, Bounds, Gaussian, GaussianSet,
    covariance, eval_density, pad_to,
)
from splatcube import look_at, render
from splatcube.errors import (
    InvalidRotationError, InvalidScaleError,
    DegenerateCovarianceError, OverfullSetError,
)


def quat_multiply(a, b):
    # independent reference for composing rotations in the equivariance test
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def random_set(rng, n=6):
    bounds = Bounds(np.full(3, -1.0), np.full(3, 1.0))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(
        rng.uniform(-0.8, 0.8, (n, 3)), rng.uniform(0.05, 0.4, (n, 3)), rot,
        rng.uniform(0.05, 0.95, n), rng.uniform(0, 1, (n, 3)), bounds)


class TestCovariance:
    def test_identity_rotation_unit_scale(self):
        assert np.allclose(covariance((1, 0, 0, 0), (1, 1, 1)), np.eye(3))

    def test_identity_rotation_diag(self):
        assert np.allclose(covariance((1, 0, 0, 0), (2, 1, 1)), np.diag([4.0, 1.0, 1.0]))

    def test_quarter_turn_about_z(self):
        # oracle: R for 90 degrees about z maps x->y, so R diag(4,1,1) R^T = diag(1,4,1)
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        expected = r @ np.diag([4.0, 1.0, 1.0]) @ r.T
        assert np.allclose(expected, np.diag([1.0, 4.0, 1.0]))
        s = np.sqrt(0.5)
        got = covariance((s, 0, 0, s), (2, 1, 1))
        assert np.allclose(got, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_spd_and_eigenvalues_recover_scales(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            rot = rng.normal(size=4)
            scale = rng.uniform(0.01, 5.0, 3)
            cov = covariance(rot, scale)
            assert np.allclose(cov, cov.T)
            eig = np.sort(np.linalg.eigvalsh(cov))
            assert np.all(eig > 0)
            assert np.allclose(eig, np.sort(scale**2), rtol=1e-5, atol=1e-8)

    def test_normalizes_rotation_internally(self):
        assert np.allclose(covariance((2, 0, 0, 0), (1, 2, 3)),
                           covariance((1, 0, 0, 0), (1, 2, 3)))

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidRotationError):
            covariance((0, 0, 0, 0), (1, 1, 1))

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(InvalidScaleError):
            covariance((1, 0, 0, 0), (1, 0, 1))
        with pytest.raises(InvalidScaleError):
            covariance((1, 0, 0, 0), (1, -2, 1))

    def test_batched(self):
        rng = np.random.default_rng(1)
        rot = rng.normal(size=(5, 4))
        scale = rng.uniform(0.1, 2, (5, 3))
        batched = covariance(rot, scale)
        for i in range(5):
            assert np.allclose(batched[i], covariance(rot[i], scale[i]))


class TestEvalDensity:
    def test_peak_at_center(self):
        g = Gaussian((0.3, -0.2, 0.5), (0.2, 0.3, 0.1), (1, 0, 0, 0), 1.0, (1, 1, 1))
        assert eval_density(g, g.mu) == 1.0

    def test_unit_isotropic_one_sigma(self):
        g = Gaussian((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 1.0, (1, 1, 1))
        assert eval_density(g, (1, 0, 0)) == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_matches_mahalanobis_distance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            rot = rng.normal(size=4)
            rot /= np.linalg.norm(rot)
            g = Gaussian(rng.normal(size=3), rng.uniform(0.1, 2, 3), rot, 1.0, (1, 1, 1))
            x = rng.normal(size=3)
            cov = covariance(g.rot, g.scale)
            d2 = (x - g.mu) @ np.linalg.solve(cov, x - g.mu)
            assert eval_density(g, x) == pytest.approx(np.exp(-0.5 * d2), rel=1e-9)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            r = rng.normal(size=4)
            r /= np.linalg.norm(r)
            from splatcube.gaussians import quaternion_to_matrix
            rmat = quaternion_to_matrix(r)
            mu = rng.normal(size=3)
            scale = rng.uniform(0.2, 1.5, 3)
            x = mu + rng.normal(size=3)
            g = Gaussian(mu, scale, q, 1.0, (1, 1, 1))
            g_rot = Gaussian(mu, scale, quat_multiply(r, q), 1.0, (1, 1, 1))
            x_rot = mu + rmat @ (x - mu)
            assert eval_density(g, x) == pytest.approx(eval_density(g_rot, x_rot), rel=1e-9)

    def test_degenerate_covariance_raises(self):
        g = Gaussian((0, 0, 0), (1.0, 1.0, 0.5e-5), (1, 0, 0, 0), 1.0, (1, 1, 1))
        with pytest.raises(DegenerateCovarianceError):
            eval_density(g, (0.1, 0, 0))


class TestPadTo:
    def test_appends_zero_opacity(self):
        rng = np.random.default_rng(4)
        gset = random_set(rng, n=5)
        padded = pad_to(gset, 8)
        assert len(padded) == 8
        assert np.all(padded.opacity[5:] == 0.0)
        assert np.all(padded.scale[5:] > 0)
        assert np.allclose(np.linalg.norm(padded.rot[5:], axis=1), 1.0)

    def test_noop_at_target(self):
        rng = np.random.default_rng(5)
        gset = random_set(rng, n=4)
        padded = pad_to(gset, 4)
        assert len(padded) == 4
        assert np.array_equal(padded.mu, gset.mu)

    def test_prefix_untouched_bitwise(self):
        rng = np.random.default_rng(6)
        gset = random_set(rng, n=5)
        padded = pad_to(gset, 9)
        for name in ("mu", "scale", "rot", "opacity", "color"):
            assert np.array_equal(getattr(padded, name)[:5], getattr(gset, name))

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        gset = random_set(rng, n=3)
        once = pad_to(gset, 6)
        twice = pad_to(once, 6)
        assert np.array_equal(once.features(), twice.features())

    def test_overfull_raises(self):
        rng = np.random.default_rng(8)
        with pytest.raises(OverfullSetError):
            pad_to(random_set(rng, n=5), 4)

    def test_render_bit_equal(self):
        rng = np.random.default_rng(9)
        gset = random_set(rng, n=4)
        cam = look_at((0, 0.4, -2.5), (0, 0, 0), width=32, height=32)
        base = render(gset, cam).pixels
        padded = render(pad_to(gset, 16), cam).pixels
        assert np.array_equal(base, padded)


class TestTypes:
    def test_channel_count(self):
        g = Gaussian((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 0.5, (1, 0, 0))
        assert g.as_vector().shape == (CHANNELS,)
        assert CHANNELS == 14

    def test_features_round_trip(self):
        rng = np.random.default_rng(10)
        gset = random_set(rng)
        back = GaussianSet.from_features(gset.features(), gset.bounds)
        assert np.array_equal(back.features(), gset.features())

    def test_bounds_ordering_enforced(self):
        with pytest.raises(ValueError):
            Bounds(np.array([0.0, 0.0, 0.0]), np.array([1.0, -1.0, 1.0]))

    def test_validate_catches_bad_values(self):
        rng = np.random.default_rng(11)
        gset = random_set(rng)
        gset.opacity[0] = 1.5
        with pytest.raises(ValueError):
            gset.validate()

    def test_getitem(self):
        rng = np.random.default_rng(12)
        gset = random_set(rng)
        g = gset[2]
        assert np.array_equal(g.mu, gset.mu[2])
        assert g.opacity == gset.opacity[2]
