"""Forward-process utilities for diffusion on cube features.

Covers the variance-preserving cosine noise schedule, the forward noising
step y_t = alpha_t * y_0 + sigma_t * eps, and adaptive group normalization;
the denoiser network itself is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
GROUPNORM_EPS = 1e-5
DEFAULT_GROUPS = 32


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule: alpha[t]^2 + sigma[t]^2 = 1 for t in 0..T."""

    timesteps: int
    alpha: np.ndarray  # (T+1,)
    sigma: np.ndarray  # (T+1,)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.alpha.shape != (self.timesteps + 1,) or self.sigma.shape != self.alpha.shape:
            raise ConfigError("alpha and sigma must both have length T + 1")


def cosine_schedule(timesteps: int = 1000) -> NoiseSchedule:
    """Cosine schedule with offset s=0.008 and per-step ratios capped at 0.999.

    alpha_bar(t) = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
    rebuilt from the capped per-step ratios so alpha[0] = 1, sigma[0] = 0 and
    alpha is nonincreasing.
    """
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    t = np.arange(timesteps + 1, dtype=np.float64)
    f = np.cos(((t / timesteps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * np.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    betas = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    betas = np.clip(betas, 0.0, MAX_BETA)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    alpha = np.sqrt(alpha_bar)
    sigma = np.sqrt(1.0 - alpha_bar)
    return NoiseSchedule(timesteps=timesteps, alpha=alpha, sigma=sigma)


def forward_noise(y0, t: int, eps, schedule: NoiseSchedule):
    """Noised sample alpha[t] * y0 + sigma[t] * eps."""
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if y0.shape != eps.shape:
        raise DataError(f"y0 shape {y0.shape} does not match eps shape {eps.shape}")
    if not 0 <= t <= schedule.timesteps:
        raise ConfigError(f"timestep {t} outside [0, {schedule.timesteps}]")
    return schedule.alpha[t] * y0 + schedule.sigma[t] * eps


@dataclass(frozen=True)
class AdaGNParams:
    """Group-wise modulation: scale (1 + gamma) and shift beta after GroupNorm.

    ``gamma`` and ``beta`` may be per-group or per-channel; any length that
    divides the channel count broadcasts across each group.
    """

    gamma: np.ndarray
    beta: np.ndarray
    groups: int = DEFAULT_GROUPS

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64).ravel())
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).ravel())
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if len(self.gamma) != len(self.beta):
            raise ConfigError("gamma and beta must have equal length")


def _broadcast_per_channel(vec, channels):
    if channels % len(vec) != 0:
        raise ConfigError(
            f"modulation length {len(vec)} does not divide channel count {channels}")
    return np.repeat(vec, channels // len(vec))


def adagn(features, params: AdaGNParams):
    """GroupNorm(features) * (1 + gamma) + beta over a (C, ...) tensor.

    Statistics are taken per group across the group's channels and all
    spatial positions, with epsilon 1e-5.
    """
    feat = np.asarray(features, dtype=np.float64)
    if feat.ndim < 1:
        raise DataError("features must have a leading channel axis")
    channels = feat.shape[0]
    if channels % params.groups != 0:
        raise ConfigError(
            f"channel count {channels} not divisible by {params.groups} groups")
    gamma = _broadcast_per_channel(params.gamma, channels)
    beta = _broadcast_per_channel(params.beta, channels)

    grouped = feat.reshape(params.groups, channels // params.groups, -1)
    mean = grouped.mean(axis=(1, 2), keepdims=True)
    var = grouped.var(axis=(1, 2), keepdims=True)
    normalized = (grouped - mean) / np.sqrt(var + GROUPNORM_EPS)
    normalized = normalized.reshape(feat.shape)

    shape = (channels,) + (1,) * (feat.ndim - 1)
    return normalized * (1.0 + gamma).reshape(shape) + beta.reshape(shape)
