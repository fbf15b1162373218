"""Deterministic synthetic scenes, cameras, style images, and the
occlusion construction used by the ablation and audit tests.

Everything is a pure function of its seed/spec; ground-truth images come
from the package's own renderer and masks from analytic ray-primitive
intersection, so every fixture ships with perfect labels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .feat import (
    Extractor,
    FeatureMap,
    LabelMask,
    default_semantic_extractor,
    default_texture_extractor,
    extract,
)
from .grid import SH_C0, VoxelGrid
from .render import Camera, ray_aabb, render_view


@dataclass
class Box:
    """Axis-aligned box primitive. `rgb` is the view-independent color;
    `rgb_z` optionally adds a linear SH band along world z for view
    dependence. `label` is the mask class (0 = background/preserve)."""

    bbox_min: tuple
    bbox_max: tuple
    density: float
    rgb: tuple
    rgb_z: tuple = (0.0, 0.0, 0.0)
    label: int = 1

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        lo = np.asarray(self.bbox_min) - margin
        hi = np.asarray(self.bbox_max) + margin
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def ray_hit(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        t0, t1 = ray_aabb(origin[None], dirs, np.asarray(self.bbox_min),
                          np.asarray(self.bbox_max))
        t_enter = np.where((t1 > np.maximum(t0, 0.0)), np.maximum(t0, 0.0), np.inf)
        return t_enter


@dataclass
class Sphere:
    center: tuple
    radius: float
    density: float
    rgb: tuple
    rgb_z: tuple = (0.0, 0.0, 0.0)
    label: int = 1

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        c = np.asarray(self.center)
        return ((points - c) ** 2).sum(axis=-1) <= (self.radius + margin) ** 2

    def ray_hit(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - np.asarray(self.center)
        b = dirs @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(t_near > 0, t_near, np.where(t_far > 0, t_far, np.inf))
        return np.where(hit, t, np.inf)


@dataclass
class SceneSpec:
    """Recipe for a reproducible scene: primitives on a lattice plus a
    camera ring. The seed drives the optional radiance jitter."""

    seed: int = 0
    dims: tuple = (16, 16, 16)
    bbox_min: tuple = (0.0, 0.0, 0.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    primitives: list = field(default_factory=list)
    n_cameras: int = 4
    ring_radius: float = 1.6
    ring_height: float = 0.5
    image_size: int = 32
    focal_scale: float = 1.0
    sh_degree: int = 1
    radiance_jitter: float = 0.0
    empty_density: float = -1.0

    def cameras(self) -> list[Camera]:
        center = (np.asarray(self.bbox_min) + np.asarray(self.bbox_max)) / 2.0
        out = []
        for i in range(self.n_cameras):
            ang = 2.0 * np.pi * i / self.n_cameras
            eye = np.array([center[0] + self.ring_radius * np.cos(ang),
                            center[1] + self.ring_radius * np.sin(ang),
                            self.ring_height])
            out.append(Camera.look_at(
                eye, center, focal=self.image_size * self.focal_scale,
                width=self.image_size, height=self.image_size,
                near=1e-3, far=1e3))
        return out


@dataclass
class Scene:
    """A built fixture: ground-truth grid, cameras, rendered gt images,
    and analytic per-view label masks."""

    spec: SceneSpec
    grid: VoxelGrid
    cameras: list[Camera]
    gt_images: list[np.ndarray]
    masks: list[LabelMask]

    def views(self):
        from .stylize import View
        return [View(camera=c, gt_image=img, mask=m)
                for c, img, m in zip(self.cameras, self.gt_images, self.masks)]


def _voxelize(spec: SceneSpec) -> VoxelGrid:
    grid = VoxelGrid.empty(spec.dims, spec.bbox_min, spec.bbox_max,
                           sh_degree=spec.sh_degree,
                           density_value=spec.empty_density)
    nodes = grid.node_positions().reshape(-1, 3)
    density = grid.density.reshape(-1)
    sh = grid.sh_coeffs.reshape(-1, 3, grid.n_bases)
    rng = np.random.default_rng(spec.seed)
    # color one node beyond the density support so trilinear blending at the
    # surface never darkens toward the empty-space black
    margin = float(grid.voxel_edge().max())
    for prim in spec.primitives:
        if not (np.all(np.asarray(prim_min(prim)) >= np.asarray(spec.bbox_min)) and
                np.all(np.asarray(prim_max(prim)) <= np.asarray(spec.bbox_max))):
            raise ConfigurationError(f"primitive {prim} extends outside the bbox")
        inside = prim.contains(nodes)
        shell = prim.contains(nodes, margin=margin)
        density[inside] = prim.density
        rgb = np.asarray(prim.rgb, dtype=np.float64)
        sh[shell, :, 0] = rgb / SH_C0
        if grid.n_bases >= 4 and np.any(np.asarray(prim.rgb_z) != 0.0):
            sh[shell, :, 2] = np.asarray(prim.rgb_z, dtype=np.float64)
        if spec.radiance_jitter > 0:
            n = int(shell.sum())
            sh[shell, :, 0] += rng.normal(0.0, spec.radiance_jitter / SH_C0,
                                          size=(n, 3))
    grid.density = density.reshape(grid.dims)
    grid.sh_coeffs = sh.reshape(grid.sh_coeffs.shape)
    return grid


def prim_min(prim):
    if isinstance(prim, Box):
        return prim.bbox_min
    return tuple(np.asarray(prim.center) - prim.radius)


def prim_max(prim):
    if isinstance(prim, Box):
        return prim.bbox_max
    return tuple(np.asarray(prim.center) + prim.radius)


def analytic_mask(spec: SceneSpec, camera: Camera) -> LabelMask:
    """First-hit primitive label per pixel; 0 where every primitive misses."""
    dirs = camera.ray_directions()
    origin = camera.translation
    best_t = np.full(dirs.shape[0], np.inf)
    labels = np.zeros(dirs.shape[0], dtype=np.int32)
    for prim in spec.primitives:
        t = prim.ray_hit(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        labels = np.where(closer, prim.label, labels)
    n_classes = max([p.label for p in spec.primitives], default=0)
    return LabelMask(labels.reshape(camera.height, camera.width),
                     n_classes=n_classes)


def build_scene(spec: SceneSpec) -> Scene:
    """Voxelize primitives, render ground truth, derive analytic masks."""
    grid = _voxelize(spec)
    cameras = spec.cameras()
    gt_images = []
    masks = []
    for cam in cameras:
        image, _ = render_view(grid, cam)
        gt_images.append(image)
        masks.append(analytic_mask(spec, cam))
    return Scene(spec=spec, grid=grid, cameras=cameras,
                 gt_images=gt_images, masks=masks)


def single_box_spec(seed: int = 0, dims=(16, 16, 16), image_size: int = 32,
                    n_cameras: int = 4, density: float = 80.0,
                    jitter: float = 0.03) -> SceneSpec:
    """Centered opaque box on a camera ring; the stock test scene."""
    return SceneSpec(
        seed=seed, dims=dims, image_size=image_size, n_cameras=n_cameras,
        primitives=[Box(bbox_min=(0.3, 0.3, 0.3), bbox_max=(0.7, 0.7, 0.7),
                        density=density, rgb=(0.6, 0.35, 0.25),
                        rgb_z=(0.05, 0.02, -0.02), label=1)],
        radiance_jitter=jitter)


def two_box_spec(seed: int = 0, dims=(16, 16, 16), image_size: int = 32,
                 n_cameras: int = 4) -> SceneSpec:
    """Two side-by-side boxes with labels 1 and 2 for compositional tasks."""
    return SceneSpec(
        seed=seed, dims=dims, image_size=image_size, n_cameras=n_cameras,
        primitives=[
            Box(bbox_min=(0.1, 0.25, 0.3), bbox_max=(0.45, 0.75, 0.7),
                density=80.0, rgb=(0.55, 0.3, 0.2), label=1),
            Box(bbox_min=(0.55, 0.25, 0.3), bbox_max=(0.9, 0.75, 0.7),
                density=80.0, rgb=(0.2, 0.35, 0.55), label=2),
        ],
        radiance_jitter=0.03)


@dataclass
class OcclusionScene:
    """Background wall + foreground slab with 2 open and 2 blocked views of
    a probe point on the wall (the multi-view correction construction)."""

    scene: Scene
    point: np.ndarray
    visible: list[bool]
    wall_label: int
    slab_label: int


def build_occlusion_scene(seed: int = 0, dims=(20, 20, 20),
                          image_size: int = 32) -> OcclusionScene:
    """Four forward-facing cameras; the slab hides the wall probe point
    from the last two of them.

    The wall carries mask label 0 (background) so blocked views mislabel
    the probe point with the slab's label 1. The probe sits just inside
    the wall's front face where its rendering weight is large; the slab's
    density leaves a few-percent transmittance so blocked views still
    record a small nonzero weight (the interesting regime).
    """
    wall = Box(bbox_min=(0.02, 0.02, 0.02), bbox_max=(0.98, 0.98, 0.14),
               density=120.0, rgb=(0.25, 0.5, 0.3), label=0)
    slab = Box(bbox_min=(0.46, 0.2, 0.45), bbox_max=(0.78, 0.8, 0.60),
               density=28.0, rgb=(0.7, 0.3, 0.2), label=1)
    spec = SceneSpec(seed=seed, dims=dims, image_size=image_size,
                     primitives=[wall, slab], radiance_jitter=0.02)

    target = np.array([0.5, 0.5, 0.1])
    eyes = [np.array([-0.15, 0.5, 2.0]), np.array([0.0, 0.5, 2.0]),
            np.array([0.45, 0.5, 2.0]), np.array([0.62, 0.5, 2.0])]
    cameras = [Camera.look_at(e, target, up=(0.0, 1.0, 0.0),
                              focal=image_size * 1.1, width=image_size,
                              height=image_size) for e in eyes]

    grid = _voxelize(spec)
    gt_images = []
    masks = []
    for cam in cameras:
        image, _ = render_view(grid, cam)
        gt_images.append(image)
        masks.append(analytic_mask(spec, cam))
    scene = Scene(spec=spec, grid=grid, cameras=cameras,
                  gt_images=gt_images, masks=masks)

    point = np.array([0.5, 0.5, 0.135])
    visible = []
    for eye in eyes:
        d = point - eye
        d = d / np.linalg.norm(d)
        t_hit = slab.ray_hit(eye, d[None])[0]
        t_point = float(np.linalg.norm(point - eye))
        visible.append(not (np.isfinite(t_hit) and t_hit < t_point))
    return OcclusionScene(scene=scene, point=point, visible=visible,
                          wall_label=0, slab_label=1)


def simulate_pretrained(scene: Scene, seed: int = 0,
                        radiance_noise: float = 0.32) -> "VoxelGrid":
    """The committed stand-in for a pretrained grid: exact geometry (the
    scene's own density, frozen) plus seeded SH residual noise at a
    realistic radiance-field error level (~37 dB PSNR on the stock box
    fixture). Stylization tests and their thresholds are calibrated
    against this recipe."""
    rng = np.random.default_rng(seed + 500)
    grid = scene.grid.copy()
    grid.sh_coeffs = (grid.sh_coeffs + rng.normal(
        0.0, radiance_noise, grid.sh_coeffs.shape).astype(np.float32))
    grid.frozen_density = True
    return grid


def corrupt_mask(mask: LabelMask, flip_fraction: float, n_labels: int,
                 rng: np.random.Generator) -> LabelMask:
    """Flip a fraction of pixels to uniformly random other labels."""
    labels = mask.labels.copy()
    flip = rng.random(labels.shape) < flip_fraction
    noise = rng.integers(0, n_labels, labels.shape).astype(np.int32)
    labels = np.where(flip, noise, labels)
    return LabelMask(labels, n_classes=max(mask.n_classes, n_labels - 1))


class StyleKind(enum.Enum):
    STRIPES = "stripes"
    DOTS = "dots"
    TWO_REGION = "two_region"


@dataclass
class StyleFixture:
    image: np.ndarray
    tex_features: FeatureMap
    sem_features: FeatureMap
    mask: LabelMask


def build_style_image(kind: StyleKind, seed: int = 0, size: int = 32,
                      texture_extractor: Extractor | None = None,
                      semantic_extractor: Extractor | None = None) -> StyleFixture:
    """Procedural style images with analytic masks and extracted features."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    if kind is StyleKind.STRIPES:
        a = 0.55 + 0.4 * rng.random(3)
        b = 0.05 + 0.35 * rng.random(3)
        period = 4 + int(rng.integers(0, 3))
        stripe = ((xx + yy) // period) % 2
        image = np.where(stripe[..., None] == 0, a, b)
        labels = np.zeros((size, size), dtype=np.int32)
    elif kind is StyleKind.DOTS:
        bg = 0.1 + 0.2 * rng.random(3)
        fg = 0.6 + 0.35 * rng.random(3)
        image = np.tile(bg, (size, size, 1))
        for _ in range(max(6, size // 4)):
            cy, cx = rng.integers(2, size - 2, size=2)
            r = int(rng.integers(1, max(2, size // 10)))
            d = (yy - cy) ** 2 + (xx - cx) ** 2
            image[d <= r * r] = fg
        labels = np.zeros((size, size), dtype=np.int32)
    elif kind is StyleKind.TWO_REGION:
        left = 0.55 + 0.4 * rng.random(3)
        right = 0.05 + 0.3 * rng.random(3)
        image = np.where(xx[..., None] < size // 2, left, right)
        image = image + rng.normal(0.0, 0.02, image.shape)
        labels = (xx >= size // 2).astype(np.int32)
    else:
        raise ConfigurationError(f"unknown style kind {kind}")
    image = np.clip(image, 0.0, 1.0)
    tex_x = texture_extractor or default_texture_extractor()
    sem_x = semantic_extractor or default_semantic_extractor()
    return StyleFixture(
        image=image,
        tex_features=extract(tex_x, image),
        sem_features=extract(sem_x, image),
        mask=LabelMask(labels),
    )
