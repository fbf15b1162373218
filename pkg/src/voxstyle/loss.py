"""Loss terms and their gradients w.r.t. rendered pixels or grid coefficients.

The composite loss dispatches a per-label term over a 2D mask: preserve
labels get pixel-space MSE against ground truth at full resolution, style
labels get a matched-cosine style term plus a weighted feature-space
content term at feature resolution. Total variation is a grid-level term
on SH coefficients, added once (not per view/pixel).

Normalization, documented for the report invariant:
total = style_sum / N_feat + lam * content_sum / N_feat
      + preserve_sum / N_pix + lam_tv * tv
where N_feat is the feature-resolution pixel count, N_pix the image pixel
count, style/content sums run over style-bound feature pixels, and the
preserve sum over preserve-bound image pixels (per-pixel terms are channel
means).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, EmptyCandidateError
from .feat import (
    FeatureMap,
    LabelMask,
    backprop_extract,
    downsample_mask,
    extract,
    resample_bilinear,
)
from .grid import VoxelGrid
from .match import ZERO_NORM_DISTANCE, _distance_matrix, sannfm_match

log = logging.getLogger(__name__)


class TaskMode(enum.Enum):
    OBJECT_SELECT = "object-select"
    COMPOSITIONAL = "compositional"
    SEMANTIC_AWARE = "semantic-aware"


class _Preserve:
    def __repr__(self):
        return "PRESERVE"


#: Binding value marking a label as photorealistic-preserve.
PRESERVE = _Preserve()


@dataclass
class StyleBinding:
    """Style data bound to one mask label."""

    tex_features: FeatureMap
    sem_features: FeatureMap | None = None
    style_mask: LabelMask | None = None
    image: np.ndarray | None = None


@dataclass
class LossConfig:
    """Weights of the composite loss; lam scales the feature-space content
    term, lam_tv the grid smoothness term, alpha blends texture vs semantic
    distance in semantic-aware matching. preserve_weight exists for the
    style-overflow ablation (0 removes the preservation constraint)."""

    lam: float = 0.005
    lam_tv: float = 1.0
    alpha: float = 0.5
    preserve_weight: float = 1.0

    def __post_init__(self):
        if self.lam < 0 or self.lam_tv < 0 or self.preserve_weight < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass
class LossReport:
    """Scalar breakdown of one composite loss evaluation."""

    total: float
    style: float
    content: float
    preserve: float
    tv: float
    lam: float
    lam_tv: float
    per_label_pixel_counts: dict[int, int] = field(default_factory=dict)
    n_feature_pixels: int = 0

    def weighted_sum(self) -> float:
        return self.style + self.lam * self.content + self.preserve \
            + self.lam_tv * self.tv

    def to_dict(self) -> dict:
        return {
            "total": self.total, "style": self.style, "content": self.content,
            "preserve": self.preserve, "tv": self.tv,
            "lam": self.lam, "lam_tv": self.lam_tv,
            "per_label_pixel_counts": {str(k): v for k, v in
                                       self.per_label_pixel_counts.items()},
            "n_feature_pixels": self.n_feature_pixels,
        }


def l2_feature_loss(f_r: FeatureMap, f_c: FeatureMap):
    """Mean squared error over all entries; gradient w.r.t. f_r."""
    if f_r.data.shape != f_c.data.shape:
        raise DimensionError(f"feature shapes differ: {f_r.data.shape} vs "
                             f"{f_c.data.shape}")
    diff = f_r.data - f_c.data
    value = float((diff ** 2).mean())
    grad = 2.0 * diff / diff.size
    return value, grad


def l2_pixel_loss(image_r: np.ndarray, image_gt: np.ndarray,
                  mask_region: np.ndarray):
    """MSE over the pixels selected by the boolean mask_region.

    Gradient is zero outside the region; an empty region yields (0, zeros)
    with a warning.
    """
    image_r = np.asarray(image_r, dtype=np.float64)
    image_gt = np.asarray(image_gt, dtype=np.float64)
    if image_r.shape != image_gt.shape:
        raise DimensionError("image shapes differ")
    region = np.asarray(mask_region, dtype=bool)
    if region.shape != image_r.shape[:2]:
        raise DimensionError("mask region dims must match the image")
    grad = np.zeros_like(image_r)
    n = int(region.sum())
    if n == 0:
        log.warning("l2_pixel_loss on an empty region")
        return 0.0, grad
    diff = image_r[region] - image_gt[region]
    value = float((diff ** 2).mean())
    grad[region] = 2.0 * diff / diff.size
    return value, grad


def tv_loss(grid: VoxelGrid):
    """Mean squared difference of adjacent-node SH coefficients over 3 axes.

    Returns (value, grad w.r.t. sh_coeffs). Density never enters.
    """
    sh = grid.sh_coeffs.astype(np.float64)
    nx, ny, nz = grid.dims
    n_pairs = (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
    denom = n_pairs * 3 * grid.n_bases
    total = 0.0
    grad = np.zeros_like(sh)
    for axis in range(3):
        d = np.diff(sh, axis=axis)
        total += float((d ** 2).sum())
        hi = [slice(None)] * 5
        lo = [slice(None)] * 5
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        grad[tuple(hi)] += 2.0 * d
        grad[tuple(lo)] -= 2.0 * d
    return total / denom, grad / denom


def _cosine_grad_rows(vecs: np.ndarray, matched: np.ndarray) -> np.ndarray:
    """d/d vecs of the per-row cosine distance to fixed matched vectors."""
    vn = np.linalg.norm(vecs, axis=1)
    mn = np.linalg.norm(matched, axis=1)
    ok = (vn > 0) & (mn > 0)
    grad = np.zeros_like(vecs)
    if np.any(ok):
        u = vecs[ok] / vn[ok, None]
        s = matched[ok] / mn[ok, None]
        cos = (u * s).sum(axis=1)
        grad[ok] = -(s - cos[:, None] * u) / vn[ok, None]
    return grad


def _matched_cosine(vecs: np.ndarray, style_flat: np.ndarray):
    """Match rows of `vecs` into `style_flat` by cosine distance.

    Returns (distances, grads w.r.t. vecs with indices frozen, indices).
    """
    if style_flat.shape[0] == 0:
        raise EmptyCandidateError("empty style candidate set")
    d = _distance_matrix(vecs, style_flat)
    idx = np.argmin(d, axis=1)
    dist = d[np.arange(d.shape[0]), idx]
    grad = _cosine_grad_rows(vecs, style_flat[idx])
    return dist, grad, idx


def nnfm_loss(f_r: FeatureMap, f_s: FeatureMap):
    """Mean matched cosine distance; gradient w.r.t. f_r only, with the
    match indices treated as constants for the step."""
    if f_r.channels != f_s.channels:
        raise DimensionError("channel mismatch")
    dist, grad, _ = _matched_cosine(f_r.flat(), f_s.flat())
    n = dist.shape[0]
    return float(dist.mean()), (grad / n).reshape(f_r.data.shape)


def _blended_match(vt, vs, st, ss, alpha):
    """Label-restricted blended argmin; distances returned are texture-space."""
    d = alpha * _distance_matrix(vt, st)
    if alpha != 1.0:
        d = d + (1.0 - alpha) * _distance_matrix(vs, ss)
    idx = np.argmin(d, axis=1)
    return idx


def _texture_dist_at(vt, st, idx):
    matched = st[idx]
    vn = np.linalg.norm(vt, axis=1)
    mn = np.linalg.norm(matched, axis=1)
    ok = (vn > 0) & (mn > 0)
    dist = np.full(vt.shape[0], ZERO_NORM_DISTANCE)
    dist[ok] = 1.0 - ((vt[ok] / vn[ok, None]) * (matched[ok] / mn[ok, None])).sum(axis=1)
    return dist, _cosine_grad_rows(vt, matched)


def sannfm_loss(label: int, f_r_tex: FeatureMap, f_s_tex: FeatureMap,
                f_r_sem: FeatureMap, f_s_sem: FeatureMap,
                m_r: LabelMask, m_s: LabelMask, alpha: float):
    """Semantic-aware style loss for the pixels carrying `label`.

    Matching uses the blended distance restricted to same-label style
    pixels; the returned value and gradient use the texture-space cosine
    distance only (no gradient ever flows through semantic maps).
    """
    result = sannfm_match(f_r_tex, f_r_sem, f_s_tex, f_s_sem, m_r, m_s, alpha)
    rows = np.nonzero(m_r.labels.reshape(-1) == label)[0]
    grad = np.zeros_like(f_r_tex.data)
    if rows.shape[0] == 0:
        log.warning("sannfm_loss: no pixels with label %d", label)
        return 0.0, grad
    lin = result.linear_indices(f_s_tex.width).reshape(-1)[rows]
    vt = f_r_tex.flat()[rows]
    dist, g = _texture_dist_at(vt, f_s_tex.flat(), lin)
    flat_grad = grad.reshape(-1, f_r_tex.channels)
    flat_grad[rows] = g / rows.shape[0]
    return float(dist.mean()), grad


def composite_masked_loss(rendered: np.ndarray, aux, view, task,
                          grid: VoxelGrid | None = None):
    """Label-dispatched composite loss of one rendered view.

    rendered: clamped (H, W, 3) image from render_view; aux is accepted for
    interface symmetry (the clamp backward lives in backward_radiance).
    view supplies gt_image, mask, content_features; task supplies mode,
    bindings, config and extractors. When `grid` is given the TV term is
    included in the report (value only; its gradient is grid-level).

    Returns (LossReport, pixel_grad w.r.t. the clamped rendered image).
    """
    del aux
    rendered = np.asarray(rendered, dtype=np.float64)
    mask: LabelMask = view.mask
    gt = np.asarray(view.gt_image, dtype=np.float64)
    if rendered.shape != gt.shape:
        raise DimensionError("rendered and ground-truth image shapes differ")
    cfg: LossConfig = task.config

    present = mask.present_labels()
    unbound = [m for m in present if m not in task.bindings]
    if unbound:
        raise ConfigurationError(f"mask labels {unbound} have no task binding")

    f_r = extract(task.texture_extractor, rendered)
    fh, fw = f_r.height, f_r.width
    n_feat = fh * fw
    mask_f = downsample_mask(mask, fh, fw)
    f_c: FeatureMap = view.content_features
    if f_c is None or (f_c.height, f_c.width, f_c.channels) != (fh, fw, f_r.channels):
        raise ConfigurationError("view content features missing or stale for the "
                                 "task's texture extractor")

    f_r_sem = None
    if task.mode is TaskMode.SEMANTIC_AWARE:
        frozen = getattr(view, "semantic_features", None)
        if frozen is not None:
            f_r_sem = resample_bilinear(frozen, fh, fw)
        elif task.semantic_extractor is not None:
            f_r_sem = resample_bilinear(extract(task.semantic_extractor, rendered),
                                        fh, fw)
        else:
            raise ConfigurationError("semantic-aware task needs a semantic "
                                     "extractor or frozen view semantics")

    label_flat = mask_f.labels.reshape(-1)
    fr_flat = f_r.flat()
    fc_flat = f_c.flat()
    feat_grad = np.zeros_like(f_r.data).reshape(-1, f_r.channels)
    style_sum = 0.0
    content_sum = 0.0
    counts: dict[int, int] = {}

    for label in sorted(task.bindings):
        binding = task.bindings[label]
        if binding is PRESERVE:
            continue
        rows = np.nonzero(label_flat == label)[0]
        counts[label] = rows.shape[0]
        if rows.shape[0] == 0:
            continue
        vt = fr_flat[rows]
        st = binding.tex_features.flat()
        if task.mode is TaskMode.SEMANTIC_AWARE:
            s_fh, s_fw = binding.tex_features.height, binding.tex_features.width
            s_mask = downsample_mask(binding.style_mask, s_fh, s_fw)
            cand = np.nonzero(s_mask.labels.reshape(-1) == label)[0]
            if cand.shape[0] == 0:
                log.warning("label %d absent from style mask; texture fallback", label)
                dist, g, _ = _matched_cosine(vt, st)
            else:
                ss = resample_bilinear(binding.sem_features, s_fh, s_fw).flat()
                idx = _blended_match(vt, f_r_sem.flat()[rows], st[cand],
                                     ss[cand], cfg.alpha)
                dist, g = _texture_dist_at(vt, st, cand[idx])
        else:
            dist, g, _ = _matched_cosine(vt, st)
        style_sum += float(dist.sum())
        feat_grad[rows] += g
        diff = vt - fc_flat[rows]
        content_sum += float((diff ** 2).mean(axis=1).sum())
        feat_grad[rows] += cfg.lam * 2.0 * diff / f_r.channels

    pixel_grad = np.zeros_like(rendered)
    if np.any(feat_grad):
        pixel_grad += backprop_extract(
            task.texture_extractor, rendered,
            (feat_grad / n_feat).reshape(f_r.data.shape))

    preserve_sum = 0.0
    n_pix = rendered.shape[0] * rendered.shape[1]
    for label in sorted(task.bindings):
        if task.bindings[label] is not PRESERVE:
            continue
        region = mask.labels == label
        counts[label] = int(region.sum())
        if not np.any(region):
            continue
        diff = rendered[region] - gt[region]
        preserve_sum += cfg.preserve_weight * float((diff ** 2).mean(axis=1).sum())
        pixel_grad[region] += cfg.preserve_weight * 2.0 * diff / (3.0 * n_pix)

    tv_value = 0.0
    if grid is not None:
        tv_value, _ = tv_loss(grid)

    style = style_sum / n_feat
    content = content_sum / n_feat
    preserve = preserve_sum / n_pix
    total = style + cfg.lam * content + preserve + cfg.lam_tv * tv_value
    report = LossReport(total=total, style=style, content=content,
                        preserve=preserve, tv=tv_value,
                        lam=cfg.lam, lam_tv=cfg.lam_tv,
                        per_label_pixel_counts=counts, n_feature_pixels=n_feat)
    return report, pixel_grad
