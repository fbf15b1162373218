"""Per-pixel feature extraction and resolution alignment.

Two synthetic extractor families stand in for heavyweight neural encoders
in the library's own test path: an average-pooling RGB patch extractor and
a seeded random convolution bank with an absolute-value nonlinearity
(texture space), plus a smoothed color-quantization extractor (semantic
space, forward-only). A PRECOMPUTED extractor serves tensors produced
offline by the export tool, keyed by image identity.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    MissingFeatureError,
    NonDifferentiableError,
)

log = logging.getLogger(__name__)


class FeatureSpace(enum.Enum):
    TEXTURE = "texture"
    SEMANTIC = "semantic"


class ExtractorKind(enum.Enum):
    RGB_PATCH = "rgb_patch"
    RANDOM_CONV_BANK = "random_conv_bank"
    COLOR_QUANT = "color_quant"
    PRECOMPUTED = "precomputed"


@dataclass
class FeatureMap:
    """H x W x C real-valued per-pixel features in a fixed space."""

    data: np.ndarray
    space: FeatureSpace = FeatureSpace.TEXTURE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] < 1:
            raise DimensionError(f"feature data must be (H, W, C), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DimensionError("feature map contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.channels)


@dataclass
class LabelMask:
    """H x W integer labels in {0..n_classes}; label 0 is the background /
    preserve class by convention."""

    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise DimensionError(f"mask must be (H, W), got {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DimensionError("mask labels must be integers")
        self.labels = self.labels.astype(np.int32)
        if np.any(self.labels < 0):
            raise DimensionError("mask labels must be non-negative")
        top = int(self.labels.max()) if self.labels.size else 0
        if self.n_classes is None:
            self.n_classes = top
        elif top > self.n_classes:
            raise DimensionError(f"label {top} exceeds declared class count "
                                 f"{self.n_classes}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def present_labels(self) -> list[int]:
        return sorted(int(v) for v in np.unique(self.labels))


# Fixed low-channel palette for the semantic color-quantization extractor:
# RGB cube corners, a mid gray omitted to keep channels at 8.
_CQ_PALETTE = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
     [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.float64)


@dataclass
class Extractor:
    """Configuration of one feature extractor; construction fixes behavior."""

    kind: ExtractorKind
    space: FeatureSpace
    differentiable: bool
    patch: int = 1
    stride: int = 1
    seed: int = 0
    n_kernels: int = 16
    ksize: int = 3
    smooth: int = 1
    temperature: float = 0.35
    table: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind is ExtractorKind.PRECOMPUTED and self.differentiable:
            raise DimensionError("precomputed extractors are never differentiable")

    @classmethod
    def rgb_patch(cls, patch: int = 1, stride: int = 1) -> "Extractor":
        return cls(kind=ExtractorKind.RGB_PATCH, space=FeatureSpace.TEXTURE,
                   differentiable=True, patch=patch, stride=stride,
                   name=f"rgb-patch{patch}s{stride}")

    @classmethod
    def conv_bank(cls, seed: int = 7, n_kernels: int = 16, ksize: int = 3,
                  stride: int = 2) -> "Extractor":
        return cls(kind=ExtractorKind.RANDOM_CONV_BANK, space=FeatureSpace.TEXTURE,
                   differentiable=True, seed=seed, n_kernels=n_kernels,
                   ksize=ksize, stride=stride,
                   name=f"bank{n_kernels}k{ksize}s{stride}-seed{seed}")

    @classmethod
    def color_quant(cls, smooth: int = 1, temperature: float = 0.35) -> "Extractor":
        return cls(kind=ExtractorKind.COLOR_QUANT, space=FeatureSpace.SEMANTIC,
                   differentiable=False, smooth=smooth, temperature=temperature,
                   name=f"cq8sm{smooth}")

    @classmethod
    def precomputed(cls, table: dict, space: FeatureSpace,
                    name: str = "precomputed") -> "Extractor":
        return cls(kind=ExtractorKind.PRECOMPUTED, space=space,
                   differentiable=False, table=dict(table), name=name)

    def kernels(self) -> np.ndarray:
        """Seeded conv kernels, shape (K, ksize, ksize, 3); pure in the seed."""
        rng = np.random.default_rng(self.seed)
        k = rng.normal(size=(self.n_kernels, self.ksize, self.ksize, 3))
        return k / np.sqrt(self.ksize * self.ksize * 3)

    def out_dims(self, height: int, width: int) -> tuple[int, int]:
        return (-(-height // self.stride), -(-width // self.stride))


def default_texture_extractor() -> Extractor:
    return Extractor.conv_bank(seed=7, n_kernels=16, ksize=3, stride=2)


def default_semantic_extractor() -> Extractor:
    return Extractor.color_quant(smooth=1)


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"image must be (H, W, 3), got {image.shape}")
    return image


def _patch_windows(extractor: Extractor, size: int):
    """(start, stop) index pairs of each pooling window along one axis."""
    n_out = -(-size // extractor.stride)
    starts = np.arange(n_out) * extractor.stride
    stops = np.minimum(starts + extractor.patch, size)
    return starts, stops


def _extract_rgb_patch(extractor: Extractor, image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    if extractor.patch == 1 and extractor.stride == 1:
        return image.copy()
    ys, ye = _patch_windows(extractor, h)
    xs, xe = _patch_windows(extractor, w)
    out = np.empty((ys.shape[0], xs.shape[0], 3))
    for i in range(ys.shape[0]):
        for j in range(xs.shape[0]):
            out[i, j] = image[ys[i]:ye[i], xs[j]:xe[j]].mean(axis=(0, 1))
    return out


def _backprop_rgb_patch(extractor, image, grad):
    h, w = image.shape[:2]
    if extractor.patch == 1 and extractor.stride == 1:
        return grad.copy()
    ys, ye = _patch_windows(extractor, h)
    xs, xe = _patch_windows(extractor, w)
    out = np.zeros_like(image)
    for i in range(ys.shape[0]):
        for j in range(xs.shape[0]):
            n = (ye[i] - ys[i]) * (xe[j] - xs[j])
            out[ys[i]:ye[i], xs[j]:xe[j]] += grad[i, j] / n
    return out


def _conv_bank_pre(extractor: Extractor, image: np.ndarray) -> np.ndarray:
    """Strided zero-padded correlation with the kernel bank, pre-nonlinearity."""
    h, w = image.shape[:2]
    kernels = extractor.kernels()
    pad = extractor.ksize // 2
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    oh, ow = extractor.out_dims(h, w)
    pre = np.zeros((oh, ow, extractor.n_kernels))
    s = extractor.stride
    for dy in range(extractor.ksize):
        for dx in range(extractor.ksize):
            window = padded[dy:dy + h:1, dx:dx + w:1][::s, ::s]
            pre += window @ kernels[:, dy, dx, :].T
    return pre


def _backprop_conv_bank(extractor, image, grad):
    h, w = image.shape[:2]
    kernels = extractor.kernels()
    pad = extractor.ksize // 2
    pre = _conv_bank_pre(extractor, image)
    g_pre = np.sign(pre) * grad
    acc = np.zeros((h + 2 * pad, w + 2 * pad, 3))
    s = extractor.stride
    oh, ow = g_pre.shape[:2]
    for dy in range(extractor.ksize):
        for dx in range(extractor.ksize):
            patch = g_pre @ kernels[:, dy, dx, :]          # (oh, ow, 3)
            rows = dy + np.arange(oh) * s
            cols = dx + np.arange(ow) * s
            acc[np.ix_(rows, cols)] += patch
    return acc[pad:pad + h, pad:pad + w]


def _extract_color_quant(extractor: Extractor, image: np.ndarray) -> np.ndarray:
    d2 = ((image[:, :, None, :] - _CQ_PALETTE[None, None, :, :]) ** 2).sum(axis=3)
    feat = np.exp(-d2 / (2.0 * extractor.temperature ** 2))
    r = extractor.smooth
    if r > 0:
        padded = np.pad(feat, ((r, r), (r, r), (0, 0)), mode="edge")
        box = np.zeros_like(feat)
        for dy in range(2 * r + 1):
            for dx in range(2 * r + 1):
                box += padded[dy:dy + feat.shape[0], dx:dx + feat.shape[1]]
        feat = box / (2 * r + 1) ** 2
    return feat


def extract(extractor: Extractor, image: np.ndarray, key: str | None = None) -> FeatureMap:
    """Run an extractor on an image in [0, 1]; deterministic.

    PRECOMPUTED extractors ignore the pixels and look up `key`; a miss
    raises MissingFeatureError.
    """
    if extractor.kind is ExtractorKind.PRECOMPUTED:
        if key is None or key not in extractor.table:
            raise MissingFeatureError(
                f"no precomputed features for key {key!r} in {extractor.name}")
        return extractor.table[key]
    image = _check_image(image)
    if extractor.kind is ExtractorKind.RGB_PATCH:
        data = _extract_rgb_patch(extractor, image)
    elif extractor.kind is ExtractorKind.RANDOM_CONV_BANK:
        data = np.abs(_conv_bank_pre(extractor, image))
    elif extractor.kind is ExtractorKind.COLOR_QUANT:
        data = _extract_color_quant(extractor, image)
    else:
        raise DimensionError(f"unknown extractor kind {extractor.kind}")
    return FeatureMap(data, extractor.space)


def backprop_extract(extractor: Extractor, image: np.ndarray,
                     feature_grad: FeatureMap | np.ndarray) -> np.ndarray:
    """Adjoint of `extract`'s linearization at `image`, mapping a feature
    gradient back to an image gradient.

    Both synthetic texture extractors are piecewise linear, so the adjoint
    satisfies <extract(x), g> == <x, backprop_extract(x, g)> exactly.
    """
    if not extractor.differentiable:
        raise NonDifferentiableError(f"extractor {extractor.name} is not differentiable")
    image = _check_image(image)
    grad = feature_grad.data if isinstance(feature_grad, FeatureMap) else \
        np.asarray(feature_grad, dtype=np.float64)
    oh, ow = extractor.out_dims(*image.shape[:2])
    want = (oh, ow, 3 if extractor.kind is ExtractorKind.RGB_PATCH else extractor.n_kernels)
    if grad.shape != want:
        raise DimensionError(f"feature grad shape {grad.shape} != {want}")
    if extractor.kind is ExtractorKind.RGB_PATCH:
        return _backprop_rgb_patch(extractor, image, grad)
    if extractor.kind is ExtractorKind.RANDOM_CONV_BANK:
        return _backprop_conv_bank(extractor, image, grad)
    raise NonDifferentiableError(f"extractor kind {extractor.kind} has no backward")


def resample_bilinear(fmap: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
    """Standard align-corners-false bilinear resampling; identity at equal dims."""
    if out_h < 1 or out_w < 1:
        raise DimensionError("output dims must be >= 1")
    if (out_h, out_w) == (fmap.height, fmap.width):
        return FeatureMap(fmap.data.copy(), fmap.space)
    data = _bilinear(fmap.data, out_h, out_w)
    return FeatureMap(data, fmap.space)


def _axis_coords(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    lo = np.clip(lo, 0, max(n_in - 2, 0))
    frac = np.clip(src - lo, 0.0, 1.0)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def _bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ylo, yhi, fy = _axis_coords(data.shape[0], out_h)
    xlo, xhi, fx = _axis_coords(data.shape[1], out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = data[ylo][:, xlo] * (1 - fx) + data[ylo][:, xhi] * fx
    bot = data[yhi][:, xlo] * (1 - fx) + data[yhi][:, xhi] * fx
    return top * (1 - fy) + bot * fy


def downsample_mask(mask: LabelMask, out_h: int, out_w: int) -> LabelMask:
    """Nearest-neighbor label resampling; never blends labels."""
    if out_h < 1 or out_w < 1:
        raise DimensionError("output dims must be >= 1")
    if (out_h, out_w) == (mask.height, mask.width):
        return LabelMask(mask.labels.copy(), mask.n_classes)
    ys = np.minimum(((np.arange(out_h) + 0.5) * mask.height / out_h).astype(np.int64),
                    mask.height - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * mask.width / out_w).astype(np.int64),
                    mask.width - 1)
    return LabelMask(mask.labels[np.ix_(ys, xs)], mask.n_classes)
