"""Fixed-budget fitting of a Gaussian set to posed images.

The optimization keeps the reference adaptive-control recipe (gradient-driven
densification, opacity/size pruning, periodic opacity reset) but caps the
live splat count at ``n_max``: when more candidates want densification than
the remaining budget, only those with the largest accumulated view-space
positional gradients are densified, and clone/split phases run alternately
rather than in the same event.  The fitted set is finally padded with
zero-opacity splats to exactly ``n_max``.

Raw parameters are optimized with Adam: positions directly, scales in log
space, opacity and color through a logistic, rotations as free quaternions
normalized inside the renderer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .camera import Camera
from .errors import ConfigError, InitializationError
from .gaussians import Bounds, GaussianSet, pad_to, quaternion_to_matrix
from .metrics import ssim_with_gradient
from .render import RenderedImage, render, render_backward, DEFAULT_NEAR

SPLIT_SCALE_FACTOR = 1.6
SPLIT_SAMPLES = 2
OPACITY_RESET_VALUE = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15
_LOGIT_EPS = 1e-6


def _logit(x):
    x = np.clip(x, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return np.log(x / (1.0 - x))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class FitConfig:
    n_max: int = 32768
    iterations: int = 30000
    densify_interval: int = 100
    densify_start: int = 500
    densify_end: int = 15000
    grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    prune_scale_fraction: float = 0.1
    opacity_reset_interval: int = 3000
    init_count: int | None = None
    init_opacity: float = 0.1
    lr_mu: float = 2e-3
    lr_mu_final: float | None = 2e-5
    lr_scale: float = 5e-3
    lr_rot: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-2
    ssim_weight: float = 0.2
    background: tuple = (1.0, 1.0, 1.0)
    first_phase: str = "clone"

    def validate(self):
        if self.n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {self.n_max}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.densify_interval < 1:
            raise ConfigError("densify_interval must be >= 1")
        if not self.densify_start < self.densify_end:
            raise ConfigError("densify_start must be < densify_end")
        if self.densify_end > self.iterations:
            raise ConfigError("densify_end must be <= iterations")
        if self.first_phase not in ("clone", "split"):
            raise ConfigError(f"first_phase must be 'clone' or 'split', got {self.first_phase!r}")
        if not 0 <= self.prune_opacity <= 1:
            raise ConfigError("prune_opacity must lie in [0, 1]")
        return self

    @property
    def initial_count(self):
        if self.init_count is not None:
            return max(1, int(self.init_count))
        return max(1, self.n_max // 32)

    def lr_mu_at(self, iteration):
        if self.lr_mu_final is None or self.lr_mu_final <= 0:
            return self.lr_mu
        frac = min(max(iteration / self.iterations, 0.0), 1.0)
        return float(np.exp((1 - frac) * np.log(self.lr_mu)
                            + frac * np.log(self.lr_mu_final)))


@dataclass
class DensifyEvent:
    iteration: int
    phase: str
    n_before: int
    n_after: int
    budget: int
    candidates: np.ndarray
    selected: np.ndarray
    mean_grads: np.ndarray


@dataclass
class PruneEvent:
    iteration: int
    removed: int
    n_after: int


class _Adam:
    """Per-group Adam whose state rows follow densify/prune edits."""

    def __init__(self, shapes):
        self.m = {g: np.zeros(s) for g, s in shapes.items()}
        self.v = {g: np.zeros(s) for g, s in shapes.items()}
        self.step_count = {g: 0 for g in shapes}

    def step(self, group, param, grad, lr):
        self.step_count[group] += 1
        t = self.step_count[group]
        m = self.m[group]
        v = self.v[group]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * grad * grad
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    def keep_rows(self, mask):
        for g in self.m:
            self.m[g] = self.m[g][mask]
            self.v[g] = self.v[g][mask]

    def append_rows(self, count):
        for g in self.m:
            pad = np.zeros((count,) + self.m[g].shape[1:])
            self.m[g] = np.vstack([self.m[g], pad]) if self.m[g].ndim > 1 \
                else np.concatenate([self.m[g], pad])
            self.v[g] = np.vstack([self.v[g], pad]) if self.v[g].ndim > 1 \
                else np.concatenate([self.v[g], pad])


@dataclass
class FitState:
    """Raw optimization state; sizes of all arrays stay in lockstep."""

    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    logit_opacity: np.ndarray
    logit_color: np.ndarray
    bounds: Bounds
    rng: np.random.Generator
    optimizer: _Adam
    grad_accum: np.ndarray = None
    grad_count: np.ndarray = None
    iteration: int = 0
    densify_phase: str = "clone"
    events: list = field(default_factory=list)
    count_log: list = field(default_factory=list)
    l1_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.grad_accum is None:
            self.grad_accum = np.zeros(len(self.mu))
        if self.grad_count is None:
            self.grad_count = np.zeros(len(self.mu))

    def __len__(self):
        return len(self.mu)

    def activated(self) -> GaussianSet:
        norms = np.linalg.norm(self.rot, axis=1, keepdims=True)
        return GaussianSet(
            self.mu, np.exp(self.log_scale), self.rot / norms,
            _sigmoid(self.logit_opacity), _sigmoid(self.logit_color), self.bounds,
        )

    def reset_accumulators(self):
        self.grad_accum = np.zeros(len(self))
        self.grad_count = np.zeros(len(self))

    def keep_rows(self, mask):
        self.mu = self.mu[mask]
        self.log_scale = self.log_scale[mask]
        self.rot = self.rot[mask]
        self.logit_opacity = self.logit_opacity[mask]
        self.logit_color = self.logit_color[mask]
        self.grad_accum = self.grad_accum[mask]
        self.grad_count = self.grad_count[mask]
        self.optimizer.keep_rows(mask)

    def append_rows(self, mu, log_scale, rot, logit_opacity, logit_color):
        count = len(mu)
        self.mu = np.vstack([self.mu, mu])
        self.log_scale = np.vstack([self.log_scale, log_scale])
        self.rot = np.vstack([self.rot, rot])
        self.logit_opacity = np.concatenate([self.logit_opacity, logit_opacity])
        self.logit_color = np.vstack([self.logit_color, logit_color])
        self.grad_accum = np.concatenate([self.grad_accum, np.zeros(count)])
        self.grad_count = np.concatenate([self.grad_count, np.zeros(count)])
        self.optimizer.append_rows(count)

    def mean_viewspace_grads(self):
        return self.grad_accum / np.maximum(self.grad_count, 1.0)


def initialize_state(bounds: Bounds, cfg: FitConfig, rng: np.random.Generator) -> FitState:
    n = cfg.initial_count
    mu = rng.uniform(bounds.lo, bounds.hi, size=(n, 3))
    if n > 1:
        dists = cdist(mu, mu)
        np.fill_diagonal(dists, np.inf)
        nearest = dists.min(axis=1)
    else:
        nearest = np.full(1, bounds.extent / 10.0)
    scale = np.clip(nearest, 1e-3 * bounds.extent, 0.25 * bounds.extent)
    log_scale = np.log(np.repeat(scale[:, None], 3, axis=1))
    rot = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    logit_opacity = np.full(n, _logit(cfg.init_opacity))
    logit_color = np.full((n, 3), _logit(0.5))
    shapes = {
        "mu": (n, 3), "log_scale": (n, 3), "rot": (n, 4),
        "logit_opacity": (n,), "logit_color": (n, 3),
    }
    return FitState(mu=mu, log_scale=log_scale, rot=rot,
                    logit_opacity=logit_opacity, logit_color=logit_color,
                    bounds=bounds, rng=rng, optimizer=_Adam(shapes),
                    densify_phase=cfg.first_phase)


def densify_constrained(state: FitState, cfg: FitConfig) -> FitState:
    """One budgeted densification event: clone-only or split-only, then flip.

    Candidates are splats whose mean accumulated view-space gradient reaches
    the threshold; when they outnumber the remaining budget n_max - N_c, the
    top-budget by gradient (ties to the lower index) are densified, otherwise
    all of them.  Survivor order is preserved; new splats append at the end.
    """
    n_before = len(state)
    budget = cfg.n_max - n_before
    mean_grads = state.mean_viewspace_grads()
    candidates = np.flatnonzero(mean_grads >= cfg.grad_threshold)
    if len(candidates) > budget:
        order = np.argsort(-mean_grads[candidates], kind="stable")
        selected = candidates[order[:max(budget, 0)]]
    else:
        selected = candidates
    phase = state.densify_phase

    if len(selected) > 0:
        if phase == "clone":
            state.append_rows(
                state.mu[selected], state.log_scale[selected], state.rot[selected],
                state.logit_opacity[selected], state.logit_color[selected])
        else:
            scale = np.exp(state.log_scale[selected])
            norms = np.linalg.norm(state.rot[selected], axis=1, keepdims=True)
            rotmat = quaternion_to_matrix(state.rot[selected] / norms)
            new_mu, new_ls, new_rot, new_lo, new_lc = [], [], [], [], []
            for idx, k in enumerate(selected):
                draws = state.rng.standard_normal((SPLIT_SAMPLES, 3)) * scale[idx]
                new_mu.append(state.mu[k] + draws @ rotmat[idx].T)
                new_ls.append(np.tile(state.log_scale[k] - np.log(SPLIT_SCALE_FACTOR),
                                      (SPLIT_SAMPLES, 1)))
                new_rot.append(np.tile(state.rot[k], (SPLIT_SAMPLES, 1)))
                new_lo.append(np.full(SPLIT_SAMPLES, state.logit_opacity[k]))
                new_lc.append(np.tile(state.logit_color[k], (SPLIT_SAMPLES, 1)))
            keep = np.ones(n_before, dtype=bool)
            keep[selected] = False
            state.keep_rows(keep)
            state.append_rows(np.vstack(new_mu), np.vstack(new_ls), np.vstack(new_rot),
                              np.concatenate(new_lo), np.vstack(new_lc))

    state.events.append(DensifyEvent(
        iteration=state.iteration, phase=phase, n_before=n_before,
        n_after=len(state), budget=budget, candidates=candidates,
        selected=np.asarray(selected, dtype=np.int64),
        mean_grads=mean_grads.copy()))
    state.densify_phase = "split" if phase == "clone" else "clone"
    state.reset_accumulators()
    if len(state) > cfg.n_max:
        raise AssertionError("densification exceeded the splat budget")
    return state


def prune(state: FitState, cfg: FitConfig) -> FitState:
    """Drop splats that are nearly transparent or larger than the scene allows."""
    opacity = _sigmoid(state.logit_opacity)
    max_scale = np.exp(state.log_scale).max(axis=1)
    keep = (opacity >= cfg.prune_opacity) & \
           (max_scale <= cfg.prune_scale_fraction * state.bounds.extent)
    if not keep.any():
        keep[int(np.argmax(opacity))] = True
    removed = int((~keep).sum())
    if removed:
        state.keep_rows(keep)
    state.events.append(PruneEvent(iteration=state.iteration, removed=removed,
                                   n_after=len(state)))
    return state


def _as_pixels(image):
    if isinstance(image, RenderedImage):
        return image.pixels
    return np.asarray(image, dtype=np.float64)


class FitRunner:
    """Drives the fitting loop and keeps the event/count logs for inspection."""

    def __init__(self, images, cfg: FitConfig, rng=None, bounds: Bounds = None):
        if len(images) == 0:
            raise ConfigError("at least one posed image is required")
        cfg.validate()
        self.cfg = cfg
        self.images = [(cam, _as_pixels(img)) for cam, img in images]
        for cam, pix in self.images:
            if not isinstance(cam, Camera):
                raise ConfigError("each training sample must pair a Camera with an image")
            if pix.shape != (cam.height, cam.width, 3):
                raise ConfigError(
                    f"image shape {pix.shape} does not match camera "
                    f"({cam.height}, {cam.width}, 3)")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.bounds = bounds if bounds is not None else Bounds(
            np.full(3, -1.0), np.full(3, 1.0))
        self.state = initialize_state(self.bounds, cfg, rng)
        self._check_initial_visibility()

    def _check_initial_visibility(self):
        for cam, _ in self.images:
            t = cam.to_camera(self.state.mu)
            in_front = t[:, 2] > DEFAULT_NEAR
            if not in_front.any():
                continue
            u = cam.fx * t[in_front, 0] / t[in_front, 2] + cam.cx
            v = cam.fy * t[in_front, 1] / t[in_front, 2] + cam.cy
            if np.any((u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)):
                return
        raise InitializationError("no Gaussian visible in any training view")

    def _loss_gradient(self, pred, gt):
        diff = pred - gt
        l1 = float(np.mean(np.abs(diff)))
        grad = np.sign(diff) / diff.size
        if self.cfg.ssim_weight > 0:
            ssim_val, ssim_grad = ssim_with_gradient(pred, gt)
            loss = l1 + self.cfg.ssim_weight * (1.0 - ssim_val)
            grad = grad - self.cfg.ssim_weight * ssim_grad
        else:
            loss = l1
        return loss, l1, grad

    def step(self):
        state, cfg = self.state, self.cfg
        state.iteration += 1
        t = state.iteration
        cam, gt = self.images[state.rng.integers(len(self.images))]

        gset = state.activated()
        pred = render(gset, cam, background=cfg.background)
        _, l1, d_pixels = self._loss_gradient(pred.pixels, gt)
        grads = render_backward(gset, cam, d_pixels, background=cfg.background)

        state.grad_accum[grads.visible] += grads.viewspace_grad_norm[grads.visible]
        state.grad_count[grads.visible] += 1

        # Chain activated-space gradients to the raw parameterization.
        opacity = gset.opacity
        color = gset.color
        opt = state.optimizer
        opt.step("mu", state.mu, grads.mu, cfg.lr_mu_at(t))
        opt.step("log_scale", state.log_scale, grads.scale * gset.scale, cfg.lr_scale)
        opt.step("rot", state.rot, grads.rot, cfg.lr_rot)
        opt.step("logit_opacity", state.logit_opacity,
                 grads.opacity * opacity * (1 - opacity), cfg.lr_opacity)
        opt.step("logit_color", state.logit_color,
                 grads.color * color * (1 - color), cfg.lr_color)

        state.l1_log.append(l1)

        if (cfg.densify_start <= t <= cfg.densify_end
                and t % cfg.densify_interval == 0):
            densify_constrained(state, cfg)
            prune(state, cfg)

        if cfg.opacity_reset_interval > 0 and t % cfg.opacity_reset_interval == 0:
            opacity = _sigmoid(state.logit_opacity)
            state.logit_opacity = _logit(np.minimum(opacity, OPACITY_RESET_VALUE))

        state.count_log.append(len(state))
        if len(state) > cfg.n_max:
            raise AssertionError("splat budget violated")

    def run(self) -> GaussianSet:
        while self.state.iteration < self.cfg.iterations:
            self.step()
        fitted = self.state.activated().snapped_to_wire()
        self.fitted_count = len(fitted)
        self.result = pad_to(fitted, self.cfg.n_max)
        return self.result


def fit(images, cfg: FitConfig, rng=None, bounds: Bounds = None) -> GaussianSet:
    """Fit splats to posed images; returns exactly ``cfg.n_max`` of them.

    ``images`` is a sequence of (Camera, image) pairs, where the image is an
    (H, W, 3) array in [0, 1] or a RenderedImage.
    """
    return FitRunner(images, cfg, rng=rng, bounds=bounds).run()
