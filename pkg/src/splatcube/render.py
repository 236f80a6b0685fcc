"""CPU splatting renderer with analytic gradients.

Forward: each splat is projected to an image-space ellipse (perspective
Jacobian applied to its covariance), then composited front to back in
strictly increasing camera-space depth, ties broken by set index.  The
remaining transmittance multiplies the background.

Backward: exact reverse-mode gradients of an arbitrary pixel loss with
respect to every splat parameter, including the gradient norm of each
projected 2D mean that drives densification.

Everything runs single-threaded in float64, so identical inputs give
bit-identical images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .errors import DataError
from .gaussians import GaussianSet, Gaussian, normalize_quaternion, quaternion_to_matrix

DEFAULT_BACKGROUND = (1.0, 1.0, 1.0)
DEFAULT_NEAR = 0.01

# Standard splatting practice: dilate the projected covariance by a small
# low-pass floor, skip contributions below 1/255, stop once a pixel is
# effectively opaque, and bound each splat by its 3-sigma ellipse.
LOWPASS = 0.3
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4
ELLIPSE_CUTOFF = 9.0  # squared Mahalanobis radius (3 sigma)


@dataclass
class RenderedImage:
    pixels: np.ndarray     # (H, W, 3) in [0, 1]
    background: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)


@dataclass
class GaussianGradients:
    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    viewspace_grad_norm: np.ndarray
    visible: np.ndarray


class _Projection:
    """Per-splat screen-space quantities shared by forward and backward."""

    def __init__(self, gset: GaussianSet, cam: Camera, near: float, lowpass: float):
        n = len(gset)
        w3 = cam.rotation
        self.t = gset.mu @ w3.T + cam.translation
        tz = self.t[:, 2]
        self.visible = tz > near
        # Guard divisions for culled splats; their values are never used.
        tz_safe = np.where(self.visible, tz, 1.0)
        tx, ty = self.t[:, 0], self.t[:, 1]

        self.mean2d = np.empty((n, 2))
        self.mean2d[:, 0] = cam.fx * tx / tz_safe + cam.cx
        self.mean2d[:, 1] = cam.fy * ty / tz_safe + cam.cy
        self.depth = tz

        # EWA Jacobian with the usual frustum clamp on the tangent ratios.
        self.lim_x = 1.3 * max(cam.cx, cam.width - cam.cx) / cam.fx
        self.lim_y = 1.3 * max(cam.cy, cam.height - cam.cy) / cam.fy
        ratio_x = tx / tz_safe
        ratio_y = ty / tz_safe
        self.clamped_x = np.abs(ratio_x) > self.lim_x
        self.clamped_y = np.abs(ratio_y) > self.lim_y
        rx = np.clip(ratio_x, -self.lim_x, self.lim_x)
        ry = np.clip(ratio_y, -self.lim_y, self.lim_y)
        txc = rx * tz_safe
        tyc = ry * tz_safe

        jac = np.zeros((n, 2, 3))
        jac[:, 0, 0] = cam.fx / tz_safe
        jac[:, 0, 2] = -cam.fx * txc / tz_safe**2
        jac[:, 1, 1] = cam.fy / tz_safe
        jac[:, 1, 2] = -cam.fy * tyc / tz_safe**2
        self.jac = jac
        self.m = jac @ w3  # (n, 2, 3)

        self.qnorm = np.linalg.norm(gset.rot, axis=1)
        self.qhat = normalize_quaternion(gset.rot)
        self.rotmat = quaternion_to_matrix(self.qhat)
        self.lmat = self.rotmat * gset.scale[:, None, :]
        self.sigma = self.lmat @ np.swapaxes(self.lmat, 1, 2)

        v = self.m @ self.sigma @ np.swapaxes(self.m, 1, 2)  # (n, 2, 2)
        self.cov_a = v[:, 0, 0] + lowpass
        self.cov_b = v[:, 0, 1]
        self.cov_c = v[:, 1, 1] + lowpass
        self.det = self.cov_a * self.cov_c - self.cov_b**2
        self.visible &= self.det > 0

        mid = 0.5 * (self.cov_a + self.cov_c)
        lam_max = mid + np.sqrt(np.maximum(mid**2 - self.det, 0.0))
        self.radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))


def _bbox(mean2d, radius, width, height):
    x0 = max(int(np.floor(mean2d[0] - radius)), 0)
    x1 = min(int(np.ceil(mean2d[0] + radius)) + 1, width)
    y0 = max(int(np.floor(mean2d[1] - radius)), 0)
    y1 = min(int(np.ceil(mean2d[1] + radius)) + 1, height)
    return x0, x1, y0, y1


def _draw_order(proj: _Projection, opacity):
    """Indices of contributing splats, front to back, ties by set index."""
    keep = proj.visible & (opacity >= ALPHA_MIN)
    order = np.argsort(proj.depth, kind="stable")
    return order[keep[order]]


def _splat_alpha(proj, k, x0, x1, y0, y1, opacity):
    """Per-pixel alpha of splat ``k`` over a pixel box, plus its gates."""
    dx = np.arange(x0, x1) + 0.5 - proj.mean2d[k, 0]
    dy = np.arange(y0, y1) + 0.5 - proj.mean2d[k, 1]
    det = proj.det[k]
    a, b, c = proj.cov_a[k], proj.cov_b[k], proj.cov_c[k]
    maha = (c * dx[None, :] ** 2
            - 2.0 * b * dy[:, None] * dx[None, :]
            + a * dy[:, None] ** 2) / det
    gauss = np.exp(-0.5 * maha)
    alpha = np.minimum(ALPHA_MAX, opacity[k] * gauss)
    inside = (maha <= ELLIPSE_CUTOFF) & (alpha >= ALPHA_MIN)
    return dx, dy, maha, gauss, alpha, inside


def _forward(gset, cam, proj, background, record):
    height, width = cam.height, cam.width
    image = np.zeros((height, width, 3))
    transmittance = np.ones((height, width))
    records = [] if record else None

    for k in _draw_order(proj, gset.opacity):
        x0, x1, y0, y1 = _bbox(proj.mean2d[k], proj.radius[k], width, height)
        if x0 >= x1 or y0 >= y1:
            continue
        _, _, _, _, alpha, inside = _splat_alpha(proj, k, x0, x1, y0, y1, gset.opacity)
        t_before = transmittance[y0:y1, x0:x1]
        active = inside & (t_before > T_MIN)
        if not active.any():
            continue
        alpha_eff = np.where(active, alpha, 0.0)
        weight = t_before * alpha_eff
        image[y0:y1, x0:x1] += weight[:, :, None] * gset.color[k]
        if record:
            records.append((k, x0, x1, y0, y1, t_before.copy()))
        transmittance[y0:y1, x0:x1] = t_before * (1.0 - alpha_eff)

    image += transmittance[:, :, None] * np.asarray(background, dtype=np.float64)
    return image, transmittance, records


def render(gset: GaussianSet, cam: Camera, background=DEFAULT_BACKGROUND,
           near: float = DEFAULT_NEAR, lowpass: float = LOWPASS) -> RenderedImage:
    """Rasterize a Gaussian set into an (H, W, 3) image in [0, 1]."""
    background = np.asarray(background, dtype=np.float64).reshape(3)
    proj = _Projection(gset, cam, near, lowpass)
    image, _, _ = _forward(gset, cam, proj, background, record=False)
    return RenderedImage(pixels=image, background=background)


def project_gaussian(g: Gaussian, cam: Camera, near: float = DEFAULT_NEAR,
                     lowpass: float = LOWPASS):
    """Project one splat: ``(mean2d, cov2d, depth)``, or None if behind the near plane."""
    gset = GaussianSet(g.mu[None], g.scale[None], g.rot[None], [g.opacity],
                       g.color[None], bounds=_point_bounds(g.mu))
    proj = _Projection(gset, cam, near, lowpass)
    if not proj.visible[0]:
        return None
    cov2d = np.array([[proj.cov_a[0], proj.cov_b[0]],
                      [proj.cov_b[0], proj.cov_c[0]]])
    return proj.mean2d[0].copy(), cov2d, float(proj.depth[0])


def _point_bounds(mu):
    from .gaussians import Bounds
    mu = np.asarray(mu, dtype=np.float64)
    return Bounds(mu - 1.0, mu + 1.0)


# Partial derivatives of the rotation matrix w.r.t. unit-quaternion components.
def _rotmat_partials(qhat):
    w, x, y, z = qhat
    dw = 2.0 * np.array([[0., -z, y], [z, 0., -x], [-y, x, 0.]])
    dx = 2.0 * np.array([[0., y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2.0 * np.array([[-2 * y, x, w], [x, 0., z], [-w, z, -2 * y]])
    dz = 2.0 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0.]])
    return dw, dx, dy, dz


def render_backward(gset: GaussianSet, cam: Camera, dL_dpixels,
                    background=DEFAULT_BACKGROUND, near: float = DEFAULT_NEAR,
                    lowpass: float = LOWPASS) -> GaussianGradients:
    """Gradients of ``sum(dL_dpixels * pixels)`` w.r.t. all splat parameters.

    ``background``/``near``/``lowpass`` must match the forward call.  The
    ``viewspace_grad_norm`` entries are norms of the projected-mean gradient
    measured in half-image units (the densification threshold convention).
    """
    dL_dpixels = np.asarray(dL_dpixels, dtype=np.float64)
    if dL_dpixels.shape != (cam.height, cam.width, 3):
        raise DataError(
            f"dL_dpixels shape {dL_dpixels.shape} does not match camera "
            f"({cam.height}, {cam.width}, 3)")
    if not np.isfinite(dL_dpixels).all():
        raise DataError("dL_dpixels contains non-finite values")

    background = np.asarray(background, dtype=np.float64).reshape(3)
    n = len(gset)
    grads = GaussianGradients(
        mu=np.zeros((n, 3)), scale=np.zeros((n, 3)), rot=np.zeros((n, 4)),
        opacity=np.zeros(n), color=np.zeros((n, 3)),
        viewspace_grad_norm=np.zeros(n), visible=np.zeros(n, dtype=bool),
    )
    if n == 0:
        return grads

    proj = _Projection(gset, cam, near, lowpass)
    grads.visible[:] = proj.visible & (gset.opacity >= ALPHA_MIN)
    _, t_final, records = _forward(gset, cam, proj, background, record=True)

    # Suffix accumulator: contributions of all later splats plus background.
    suffix = t_final[:, :, None] * background
    w3 = cam.rotation

    for k, x0, x1, y0, y1, t_before in reversed(records):
        dx, dy, maha, gauss, alpha, inside = _splat_alpha(
            proj, k, x0, x1, y0, y1, gset.opacity)
        active = inside & (t_before > T_MIN)
        alpha_eff = np.where(active, alpha, 0.0)
        weight = t_before * alpha_eff
        color = gset.color[k]
        d_pix = dL_dpixels[y0:y1, x0:x1]  # (h, w, 3)

        grads.color[k] = np.einsum("hw,hwc->c", weight, d_pix)

        suf = suffix[y0:y1, x0:x1]
        # dC/dalpha = T * color - suffix / (1 - alpha) on active pixels.
        one_minus = 1.0 - alpha_eff
        d_alpha = np.einsum("hwc,hwc->hw",
                            d_pix,
                            t_before[:, :, None] * color - suf / one_minus[:, :, None])
        d_alpha = np.where(active, d_alpha, 0.0)
        # Include this splat before moving to the previous (earlier) one.
        suffix[y0:y1, x0:x1] = suf + weight[:, :, None] * color

        # Through alpha = min(ALPHA_MAX, opacity * gauss): clamped pixels
        # block the chain to opacity and shape.
        unclamped = active & (alpha < ALPHA_MAX)
        grads.opacity[k] = np.sum(np.where(unclamped, d_alpha * gauss, 0.0))
        d_gauss = np.where(unclamped, d_alpha * gset.opacity[k], 0.0)
        d_maha = -0.5 * gauss * d_gauss

        det = proj.det[k]
        a, b, c = proj.cov_a[k], proj.cov_b[k], proj.cov_c[k]
        dxg = dx[None, :]
        dyg = dy[:, None]
        # maha = (c dx^2 - 2 b dx dy + a dy^2) / det with det = a c - b^2
        d_mean_x = -np.sum(d_maha * (2.0 * c * dxg - 2.0 * b * dyg) / det)
        d_mean_y = -np.sum(d_maha * (-2.0 * b * dxg + 2.0 * a * dyg) / det)
        d_cov_a = np.sum(d_maha * (dyg**2 - maha * c) / det)
        d_cov_b = np.sum(d_maha * (-2.0 * dxg * dyg + 2.0 * maha * b) / det)
        d_cov_c = np.sum(d_maha * (dxg**2 - maha * a) / det)

        _accumulate_projection_grads(
            grads, k, np.array([d_mean_x, d_mean_y]),
            d_cov_a, d_cov_b, d_cov_c, proj, gset, cam, w3)

    return grads


def _accumulate_projection_grads(grads, k, d_mean2d, d_cov_a, d_cov_b, d_cov_c,
                                 proj, gset, cam, w3):
    """Chain screen-space gradients back to (mu, scale, rot) of splat ``k``."""
    grads.viewspace_grad_norm[k] = float(np.hypot(
        d_mean2d[0] * cam.width / 2.0, d_mean2d[1] * cam.height / 2.0))

    sigma = proj.sigma[k]
    m0, m1 = proj.m[k, 0], proj.m[k, 1]
    d_sigma = (d_cov_a * np.outer(m0, m0)
               + d_cov_b * np.outer(m0, m1)
               + d_cov_c * np.outer(m1, m1))
    d_m0 = 2.0 * d_cov_a * (sigma @ m0) + d_cov_b * (sigma @ m1)
    d_m1 = d_cov_b * (sigma @ m0) + 2.0 * d_cov_c * (sigma @ m1)
    d_jac = np.stack([d_m0, d_m1]) @ w3.T  # (2, 3)

    tx, ty, tz = proj.t[k]
    fx, fy = cam.fx, cam.fy
    d_t = np.zeros(3)
    # Projected mean (unclamped ratios).
    d_t[0] += d_mean2d[0] * fx / tz
    d_t[1] += d_mean2d[1] * fy / tz
    d_t[2] += -d_mean2d[0] * fx * tx / tz**2 - d_mean2d[1] * fy * ty / tz**2
    # Jacobian entries J00 = fx/tz, J11 = fy/tz.
    d_t[2] += d_jac[0, 0] * (-fx / tz**2) + d_jac[1, 1] * (-fy / tz**2)
    # J02 = -fx * clamp(tx/tz) * tz / tz^2; branch on whether the clamp bit.
    if proj.clamped_x[k]:
        rx = np.clip(tx / tz, -proj.lim_x, proj.lim_x)
        d_t[2] += d_jac[0, 2] * (fx * rx / tz**2)
    else:
        d_t[0] += d_jac[0, 2] * (-fx / tz**2)
        d_t[2] += d_jac[0, 2] * (2.0 * fx * tx / tz**3)
    if proj.clamped_y[k]:
        ry = np.clip(ty / tz, -proj.lim_y, proj.lim_y)
        d_t[2] += d_jac[1, 2] * (fy * ry / tz**2)
    else:
        d_t[1] += d_jac[1, 2] * (-fy / tz**2)
        d_t[2] += d_jac[1, 2] * (2.0 * fy * ty / tz**3)

    grads.mu[k] = w3.T @ d_t

    # Sigma = L L^T, L = R diag(s).
    lmat = proj.lmat[k]
    rotmat = proj.rotmat[k]
    d_lmat = (d_sigma + d_sigma.T) @ lmat
    grads.scale[k] = np.sum(d_lmat * rotmat, axis=0)
    d_rotmat = d_lmat * gset.scale[k][None, :]

    qhat = proj.qhat[k]
    partials = _rotmat_partials(qhat)
    d_qhat = np.array([np.sum(d_rotmat * p) for p in partials])
    # Through quaternion normalization.
    grads.rot[k] = (d_qhat - qhat * np.dot(qhat, d_qhat)) / proj.qnorm[k]
