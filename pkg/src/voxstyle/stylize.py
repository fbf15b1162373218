"""Optimization drivers: photorealistic pretraining, color transfer
preprocessing, masked multi-view fine-tuning, and per-point gradient audits.

Pretraining fits density and radiance to the ground-truth views with pixel
MSE, then freezes density. Fine-tuning renders every view each step,
dispatches the composite masked loss, chains pixel gradients back to SH
coefficients, and applies an RMS-style adaptive step to radiance only.
All loops are deterministic: fixed view order, no stochastic batching.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError, OutOfBoundsError
from .feat import Extractor, FeatureMap, LabelMask, default_texture_extractor, extract
from .grid import VoxelGrid
from .loss import (
    PRESERVE,
    LossConfig,
    LossReport,
    StyleBinding,
    TaskMode,
    composite_masked_loss,
    l2_pixel_loss,
    tv_loss,
)
from .render import (
    Camera,
    _masked_pixel_grads,
    backward_full,
    backward_radiance,
    render_view,
)

log = logging.getLogger(__name__)


@dataclass
class View:
    """One viewpoint: camera, ground-truth image, label mask, and cached
    texture-space features of the (possibly color-transferred) gt image.

    `semantic_features`, when set, freezes the semantic side of
    semantic-aware matching to these per-view features (e.g. exported
    encoder output for the gt view) instead of recomputing them from the
    rendered image each step; semantics carry no gradient either way.
    """

    camera: Camera
    gt_image: np.ndarray
    mask: LabelMask
    content_features: FeatureMap | None = None
    semantic_features: FeatureMap | None = None

    def __post_init__(self):
        self.gt_image = np.asarray(self.gt_image, dtype=np.float64)
        if self.gt_image.shape != (self.camera.height, self.camera.width, 3):
            raise ConfigurationError("gt image dims do not match the camera")
        if (self.mask.height, self.mask.width) != self.gt_image.shape[:2]:
            raise ConfigurationError("mask dims do not match the gt image")


def prepare_views(views: list[View], extractor: Extractor) -> list[View]:
    """Cache content features for every view with the given extractor."""
    for v in views:
        v.content_features = extract(extractor, v.gt_image)
    return views


@dataclass
class TaskSpec:
    """What to stylize and how: mode, per-label bindings, loss weights,
    and optimizer settings."""

    mode: TaskMode
    bindings: dict
    config: LossConfig = field(default_factory=LossConfig)
    texture_extractor: Extractor = field(default_factory=default_texture_extractor)
    semantic_extractor: Extractor | None = None
    steps: int = 150
    lr: float = 1e-2
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    step_size: float | None = None
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.mode is TaskMode.OBJECT_SELECT:
            if set(self.bindings) != {0, 1} or self.bindings[0] is not PRESERVE \
                    or self.bindings[1] is PRESERVE:
                raise ConfigurationError(
                    "object selection uses exactly labels {0: preserve, 1: style}")
        if self.mode is TaskMode.SEMANTIC_AWARE:
            for label, b in self.bindings.items():
                if b is PRESERVE:
                    continue
                if b.sem_features is None or b.style_mask is None:
                    raise ConfigurationError(
                        f"semantic-aware binding for label {label} needs semantic "
                        "features and a style mask")
        if not self.texture_extractor.differentiable:
            raise ConfigurationError("fine-tuning needs a differentiable "
                                     "texture extractor")


@dataclass
class OptState:
    """Progress of one fine-tuning run."""

    step: int = 0
    reports: list[LossReport] = field(default_factory=list)
    rms_sh: np.ndarray | None = None


def _rms_step(param32: np.ndarray, grad: np.ndarray, accum: np.ndarray,
              lr: float, decay: float, eps: float) -> np.ndarray:
    accum *= decay
    accum += (1.0 - decay) * grad * grad
    updated = param32.astype(np.float64) - lr * grad / (np.sqrt(accum) + eps)
    return updated.astype(np.float32)


def pretrain(grid: VoxelGrid, views: list[View], steps: int = 2000,
             lr: float = 3e-2, rms_decay: float = 0.99, rms_eps: float = 1e-8,
             plateau_window: int = 50, plateau_rel: float = 1e-5,
             step_size: float | None = None, background=(0.0, 0.0, 0.0),
             log_cb=None) -> VoxelGrid:
    """Fit density and radiance to the ground-truth views by pixel MSE,
    then freeze density.

    Stops at the step budget or when the relative loss improvement over
    `plateau_window` steps falls below `plateau_rel`. Raises NumericalError
    on divergence (non-finite loss).
    """
    if len(views) < 2:
        raise ConfigurationError("pretraining needs at least 2 views")
    rms_sh = np.zeros(grid.sh_coeffs.shape, dtype=np.float64)
    rms_density = np.zeros(grid.density.shape, dtype=np.float64)
    full = None
    history: list[float] = []
    for it in range(steps):
        total = 0.0
        sh_grad = np.zeros(grid.sh_coeffs.shape, dtype=np.float64)
        dens_grad = np.zeros(grid.density.shape, dtype=np.float64)
        for v in views:
            image, aux = render_view(grid, v.camera, step_size, background)
            if full is None or full.shape != image.shape[:2]:
                full = np.ones(image.shape[:2], dtype=bool)
            value, pixel_grad = l2_pixel_loss(image, v.gt_image, full)
            total += value
            sg, dg = backward_full(aux, pixel_grad)
            sh_grad += sg
            dens_grad += dg
        total /= len(views)
        if not np.isfinite(total):
            raise NumericalError(f"pretraining diverged at step {it}: loss={total}")
        grid.sh_coeffs = _rms_step(grid.sh_coeffs, sh_grad / len(views),
                                   rms_sh, lr, rms_decay, rms_eps)
        grid.density = _rms_step(grid.density, dens_grad / len(views),
                                 rms_density, lr, rms_decay, rms_eps)
        grid.bump_version()
        history.append(total)
        if log_cb is not None:
            log_cb({"step": it, "mse": total})
        if it >= plateau_window:
            prev = history[-plateau_window - 1]
            if prev > 0 and (prev - total) / prev < plateau_rel:
                log.info("pretrain plateau at step %d (mse %.3g)", it, total)
                break
    grid.frozen_density = True
    return grid


def _psd_sqrt(mat: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    s = np.sqrt(w)
    if inverse:
        s = 1.0 / s
    return (v * s) @ v.T


def color_transfer(source_images, target_style, region_masks=None,
                   region_label: int | None = None, style_mask: LabelMask | None = None,
                   style_label: int | None = None, eps: float = 1e-5,
                   min_pixels: int = 10):
    """Affine RGB map matching selected source pixels' mean/covariance to a
    style region, applied identically across all views.

    Selection defaults to every pixel; with region_masks/region_label only
    those labels move and everything else is returned bit-identical. A
    degenerate selection (< min_pixels on either side) yields the identity
    map with a warning. Returns (transferred_images, A, b).
    """
    sources = [np.asarray(im, dtype=np.float64) for im in source_images]
    style = np.asarray(target_style, dtype=np.float64)
    if region_masks is not None and len(region_masks) != len(sources):
        raise ConfigurationError("one region mask per source image required")

    def selection(i):
        if region_masks is None:
            return np.ones(sources[i].shape[:2], dtype=bool)
        return region_masks[i].labels == region_label

    pooled = np.concatenate([sources[i][selection(i)] for i in range(len(sources))])
    if style_mask is not None:
        style_px = style[style_mask.labels == style_label]
    else:
        style_px = style.reshape(-1, 3)

    identity = (np.eye(3), np.zeros(3))
    if pooled.shape[0] < min_pixels or style_px.shape[0] < min_pixels:
        log.warning("color transfer: degenerate selection (%d source / %d style "
                    "pixels); using identity map", pooled.shape[0], style_px.shape[0])
        a, b = identity
        return [im.copy() for im in sources], a, b

    mu_s = pooled.mean(axis=0)
    mu_t = style_px.mean(axis=0)
    cov_s = np.cov(pooled, rowvar=False, bias=True) + eps * np.eye(3)
    cov_t = np.cov(style_px, rowvar=False, bias=True) + eps * np.eye(3)
    a = _psd_sqrt(cov_t) @ _psd_sqrt(cov_s, inverse=True)
    b = mu_t - a @ mu_s

    out = []
    for i, im in enumerate(sources):
        moved = im.copy()
        sel = selection(i)
        moved[sel] = np.clip(im[sel] @ a.T + b, 0.0, 1.0)
        out.append(moved)
    return out, a, b


def _aggregate_reports(reports: list[LossReport], tv_value: float,
                       cfg: LossConfig) -> LossReport:
    style = sum(r.style for r in reports)
    content = sum(r.content for r in reports)
    preserve = sum(r.preserve for r in reports)
    counts: dict[int, int] = {}
    for r in reports:
        for k, v in r.per_label_pixel_counts.items():
            counts[k] = counts.get(k, 0) + v
    total = style + cfg.lam * content + preserve + cfg.lam_tv * tv_value
    return LossReport(total=total, style=style, content=content,
                      preserve=preserve, tv=tv_value, lam=cfg.lam,
                      lam_tv=cfg.lam_tv, per_label_pixel_counts=counts,
                      n_feature_pixels=reports[0].n_feature_pixels if reports else 0)


def finetune(grid: VoxelGrid, views: list[View], task: TaskSpec, log_cb=None):
    """Masked multi-view stylization of the radiance coefficients.

    Each step renders every view, sums the per-view pixel-gradient chains
    into one SH gradient, adds the TV gradient once, and applies the RMS
    step to sh_coeffs. Density is frozen and verified bit-identical.
    Returns (grid, OptState).
    """
    if not grid.frozen_density:
        raise ConfigurationError("fine-tuning requires a pretrained grid "
                                 "(density frozen)")
    for v in views:
        if v.content_features is None:
            raise ConfigurationError("views must carry cached content features; "
                                     "call prepare_views first")
    density_before = grid.density.copy()
    state = OptState(rms_sh=np.zeros(grid.sh_coeffs.shape, dtype=np.float64))
    for it in range(task.steps):
        sh_grad = np.zeros(grid.sh_coeffs.shape, dtype=np.float64)
        reports = []
        for v in views:
            image, aux = render_view(grid, v.camera, task.step_size, task.background)
            report, pixel_grad = composite_masked_loss(image, aux, v, task)
            sh_grad += backward_radiance(aux, pixel_grad)
            reports.append(report)
        tv_value, tv_grad = tv_loss(grid)
        sh_grad += task.config.lam_tv * tv_grad
        agg = _aggregate_reports(reports, tv_value, task.config)
        if not np.isfinite(agg.total):
            raise NumericalError(f"stylization diverged at step {it}")
        grid.sh_coeffs = _rms_step(grid.sh_coeffs, sh_grad, state.rms_sh,
                                   task.lr, task.rms_decay, task.rms_eps)
        grid.bump_version()
        state.step = it + 1
        state.reports.append(agg)
        if log_cb is not None:
            log_cb({"step": it, **agg.to_dict()})
    if not np.array_equal(grid.density, density_before):
        raise NumericalError("density changed during fine-tuning")
    return grid, state


@dataclass
class ViewContribution:
    """One view's share of a 3D point's radiance gradient."""

    view_index: int
    weight: float
    label: int
    grad: np.ndarray
    pixel: tuple[int, int]


def gradient_audit(grid: VoxelGrid, views: list[View], task: TaskSpec,
                   sample_position) -> list[ViewContribution]:
    """Per-view rendering weight, mask label, and gradient term at a 3D point.

    For each view the point is projected to its pixel, the nearest ray
    sample is located, and the contribution w * dL/d(pixel) recorded. Views
    where the point carries zero weight are omitted; a fully transparent
    point yields an empty list.
    """
    point = np.asarray(sample_position, dtype=np.float64)
    if not bool(grid.contains(point)):
        raise OutOfBoundsError(f"audit point {point} outside the grid bbox")
    out: list[ViewContribution] = []
    for i, v in enumerate(views):
        image, aux = render_view(grid, v.camera, task.step_size, task.background)
        _, pixel_grad = composite_masked_loss(image, aux, v, task)
        proj = v.camera.project(point)
        if proj is None:
            continue
        x, y, _ = proj
        px, py = int(round(x)), int(round(y))
        if not (0 <= px < v.camera.width and 0 <= py < v.camera.height):
            continue
        ray = py * v.camera.width + px
        n = aux.counts[ray]
        if n == 0:
            continue
        lo = aux.offsets[ray]
        ts = aux.t[lo:lo + n]
        t_point = float((point - aux.ray_origin) @ aux.ray_dirs[ray])
        j = int(np.argmin(np.abs(ts - t_point)))
        if abs(ts[j] - t_point) > aux.delta[lo + j] / 2 + 1e-9:
            continue
        w = float(aux.weight[lo + j])
        if w <= 0.0:
            continue
        g = _masked_pixel_grads(aux, pixel_grad)[ray]
        out.append(ViewContribution(view_index=i, weight=w,
                                    label=int(v.mask.labels[py, px]),
                                    grad=w * g, pixel=(px, py)))
    return out
