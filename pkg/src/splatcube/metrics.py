"""Image quality metrics: PSNR and single-scale SSIM.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
unit data range, sample statistics without bias correction, and valid-mode
windows; color images are scored per channel and averaged.  A closed-form
gradient of SSIM with respect to the first image is provided for use as a
training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve, correlate

from .errors import DataError

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
C1 = K1 * K1
C2 = K2 * K2


def _window_1d():
    half = (WINDOW_SIZE - 1) / 2.0
    x = np.arange(WINDOW_SIZE) - half
    w = np.exp(-0.5 * (x / WINDOW_SIGMA) ** 2)
    return w / w.sum()


_W1 = _window_1d()


def _filter_valid(img):
    tmp = correlate(img, _W1[:, None], mode="valid")
    return correlate(tmp, _W1[None, :], mode="valid")


def _filter_adjoint(grad):
    tmp = convolve(grad, _W1[:, None], mode="full")
    return convolve(tmp, _W1[None, :], mode="full")


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise DataError(f"expected (H, W) or (H, W, C) images, got shape {a.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; inf if identical."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_channel(x, y, want_grad):
    mu_x = _filter_valid(x)
    mu_y = _filter_valid(y)
    s_xx = _filter_valid(x * x)
    s_yy = _filter_valid(y * y)
    s_xy = _filter_valid(x * y)
    var_x = s_xx - mu_x * mu_x
    var_y = s_yy - mu_y * mu_y
    cov = s_xy - mu_x * mu_y

    a1 = 2.0 * mu_x * mu_y + C1
    a2 = 2.0 * cov + C2
    b1 = mu_x * mu_x + mu_y * mu_y + C1
    b2 = var_x + var_y + C2
    denom = b1 * b2
    smap = a1 * a2 / denom
    value = float(np.mean(smap))
    if not want_grad:
        return value, None

    # Partials of the SSIM map w.r.t. the window statistics of x.
    inv_count = 1.0 / smap.size
    d_mu = (2.0 * mu_y * (a2 - a1) / denom
            - smap * 2.0 * mu_x * (b2 - b1) / denom) * inv_count
    d_sxx = (-smap / b2) * inv_count
    d_sxy = (2.0 * a1 / denom) * inv_count
    grad = (_filter_adjoint(d_mu)
            + 2.0 * x * _filter_adjoint(d_sxx)
            + y * _filter_adjoint(d_sxy))
    return value, grad


def ssim(a, b) -> float:
    """Mean single-scale SSIM; 1.0 iff the images are identical."""
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise DataError(
            f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE}, got {a.shape[:2]}")
    values = [_ssim_channel(a[:, :, ch], b[:, :, ch], False)[0]
              for ch in range(a.shape[2])]
    return float(np.mean(values))


def ssim_with_gradient(a, b):
    """SSIM value plus its gradient with respect to ``a`` (same shape as ``a``)."""
    orig_shape = np.asarray(a).shape
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise DataError(
            f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE}, got {a.shape[:2]}")
    nch = a.shape[2]
    grads = np.empty_like(a)
    values = []
    for ch in range(nch):
        value, grad = _ssim_channel(a[:, :, ch], b[:, :, ch], True)
        values.append(value)
        grads[:, :, ch] = grad
    grads /= nch
    return float(np.mean(values)), grads.reshape(orig_shape)


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float

    def to_json_dict(self):
        return {
            "psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
        }


def compare(a, b) -> MetricReport:
    return MetricReport(psnr_db=psnr(a, b), ssim=ssim(a, b))
