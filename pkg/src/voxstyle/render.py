"""Differentiable ray-marching volume renderer.

Forward: per pixel, uniform samples along the ray are trilinearly
interpolated from the grid, SH-evaluated to radiance, and alpha-composited
with weights w_i = T_i * (1 - exp(-sigma_i * delta_i)),
T_i = exp(-sum_{j<i} sigma_j * delta_j). The residual transmittance after
the last sample weights a configurable background color. The composited
image is clamped to [0, 1] once, at final assembly.

Backward: the gradient of a pixel w.r.t. a sample's radiance is exactly
w_i * pixel_grad, chained through the SH basis and the sample's trilinear
footprint. The clamp backward is pass-through strictly inside (0, 1) and
zero outside. Density gradients are only produced by the separate
pretraining path (`backward_full`); the stylization backward leaves
density untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DimensionError, StaleAuxError
from .grid import SamplePoint, VoxelGrid, activate_density, sh_basis, trilinear_footprint

EARLY_STOP_T = 1e-4
_SCATTER_CHUNK = 65536


@dataclass
class Camera:
    """Pinhole camera. `rotation` maps camera coords to world coords
    (columns: right, down, forward) and `translation` is the eye position.
    Pixel (x, y) looks along ((x + .5 - W/2)/f, (y + .5 - H/2)/f, 1).
    """

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise DimensionError("camera rotation must be 3x3")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-6:
            raise DimensionError("camera rotation not orthonormal within 1e-6")
        if not (0 < self.near < self.far):
            raise DimensionError(f"need 0 < near < far, got {self.near}, {self.far}")
        if self.width < 1 or self.height < 1:
            raise DimensionError("image must be at least 1x1")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), focal=32.0,
                width=32, height=32, near=1e-3, far=1e3) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=1)
        return cls(rot, eye, float(focal), int(width), int(height),
                   float(near), float(far))

    def ray_directions(self) -> np.ndarray:
        """Unit world-space directions for all pixels, shape (H*W, 3), row-major."""
        xs = (np.arange(self.width) + 0.5 - self.width / 2.0) / self.focal
        ys = (np.arange(self.height) + 0.5 - self.height / 2.0) / self.focal
        gx, gy = np.meshgrid(xs, ys)          # (H, W)
        cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1).reshape(-1, 3)
        world = cam @ self.rotation.T
        return world / np.linalg.norm(world, axis=1, keepdims=True)

    def project(self, point: np.ndarray):
        """World point -> (x_pixel, y_pixel, depth along optical axis) or None."""
        local = self.rotation.T @ (np.asarray(point, dtype=np.float64) - self.translation)
        if local[2] <= 0:
            return None
        x = local[0] / local[2] * self.focal + self.width / 2.0 - 0.5
        y = local[1] / local[2] * self.focal + self.height / 2.0 - 0.5
        return x, y, local[2]


@dataclass
class RenderAux:
    """Everything backward needs, recorded at forward time.

    Flat per-sample arrays are ordered front-to-back within each ray and
    rays are row-major pixels. Samples dropped by early termination
    (T < EARLY_STOP_T) are not recorded; the residual transmittance of
    each ray accounts for the retained prefix exactly.
    """

    grid: VoxelGrid
    grid_version: int
    height: int
    width: int
    background: np.ndarray
    ray_origin: np.ndarray
    ray_dirs: np.ndarray          # (R, 3)
    ray_basis: np.ndarray         # (R, B) SH basis per ray direction
    counts: np.ndarray            # (R,) samples per ray
    offsets: np.ndarray           # (R,) start of each ray's samples
    t_resid: np.ndarray           # (R,) transmittance after the last sample
    ray_id: np.ndarray            # (n,)
    t: np.ndarray                 # (n,) ray parameter of each sample
    delta: np.ndarray             # (n,)
    raw_density: np.ndarray       # (n,)
    sigma: np.ndarray             # (n,)
    rgb: np.ndarray               # (n, 3) per-sample radiance, unclamped
    weight: np.ndarray            # (n,) w_i
    trans: np.ndarray             # (n,) T_i
    corner_idx: np.ndarray        # (n, 8) flat voxel ids
    corner_w: np.ndarray          # (n, 8)
    image_preclamp: np.ndarray    # (H, W, 3)

    @property
    def n_samples(self) -> int:
        return self.ray_id.shape[0]

    def check_fresh(self):
        if self.grid.version != self.grid_version:
            raise StaleAuxError(
                f"aux rendered at grid version {self.grid_version}, "
                f"grid is now {self.grid.version}")


def ray_aabb(origins: np.ndarray, dirs: np.ndarray, bbox_min, bbox_max):
    """Slab intersection. Returns (t_enter, t_exit); miss when t_exit <= t_enter."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    t_enter = np.full(n, -np.inf)
    t_exit = np.full(n, np.inf)
    for a in range(3):
        o = origins[:, a] if origins.shape[0] == n else np.full(n, origins[0, a])
        d = dirs[:, a]
        parallel = d == 0.0
        safe = np.where(parallel, 1.0, d)
        t1 = (bbox_min[a] - o) / safe
        t2 = (bbox_max[a] - o) / safe
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        if np.any(parallel):
            in_slab = (o >= bbox_min[a]) & (o <= bbox_max[a])
            lo = np.where(parallel, np.where(in_slab, -np.inf, np.inf), lo)
            hi = np.where(parallel, np.where(in_slab, np.inf, -np.inf), hi)
        t_enter = np.maximum(t_enter, lo)
        t_exit = np.minimum(t_exit, hi)
    return t_enter, t_exit


def _sample_ts(t0: np.ndarray, t1: np.ndarray, step: float):
    """Half-offset uniform sample parameters per ray.

    Samples sit at t0 + (k + 1/2) * step for k = 0 .. n-1 with
    n = floor((t1 - t0)/step + 1/2), which keeps every sample strictly
    inside (t0, t1) up to roundoff.
    """
    span = np.maximum(t1 - t0, 0.0)
    counts = np.maximum(np.floor(span / step + 0.5).astype(np.int64), 0)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    total = int(counts.sum())
    ray_id = np.repeat(np.arange(counts.shape[0]), counts)
    k = np.arange(total) - offsets[ray_id]
    t = t0[ray_id] + (k + 0.5) * step
    return counts, offsets, ray_id, t


def march_ray(grid: VoxelGrid, origin, direction, step: float) -> list[SamplePoint]:
    """Uniform samples of one ray inside the grid bbox, front to back.

    The first sample sits step/2 past the bbox entry (or past the origin
    when it already lies inside). A ray that misses the bbox yields [].
    """
    if not step > 0:
        raise DimensionError(f"step must be positive, got {step}")
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(direction))
    if abs(norm - 1.0) > 1e-6:
        raise DimensionError(f"ray direction norm {norm} not unit within 1e-6")
    t_enter, t_exit = ray_aabb(origin[None], direction[None],
                               grid.bbox_min, grid.bbox_max)
    t0 = max(float(t_enter[0]), 0.0)
    t1 = float(t_exit[0])
    if t1 <= t0:
        return []
    _, _, _, ts = _sample_ts(np.array([t0]), np.array([t1]), step)
    return [SamplePoint(origin + t * direction, direction, step) for t in ts]


def composite(sigmas, rgbs, deltas, background=(0.0, 0.0, 0.0)):
    """Alpha-composite one ray front to back.

    Returns (pixel_rgb, weights, transmittances); pixel_rgb includes the
    background weighted by the residual transmittance and is NOT clamped.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    rgbs = np.asarray(rgbs, dtype=np.float64).reshape(-1, 3)
    deltas = np.asarray(deltas, dtype=np.float64)
    if not (sigmas.shape[0] == rgbs.shape[0] == deltas.shape[0]):
        raise DimensionError("sigma/rgb/delta lists must share length")
    if np.any(sigmas < 0):
        raise ContractViolationError("negative sigma passed to composite")
    if np.any(deltas <= 0):
        raise ContractViolationError("non-positive delta passed to composite")
    background = np.asarray(background, dtype=np.float64)
    sdelta = sigmas * deltas
    cum = np.cumsum(sdelta)
    trans = np.exp(-(cum - sdelta))            # T_i, exclusive prefix
    alpha = 1.0 - np.exp(-sdelta)
    weights = trans * alpha
    t_resid = np.exp(-cum[-1]) if sigmas.shape[0] else 1.0
    pixel = weights @ rgbs + t_resid * background
    return pixel, weights, trans


def _empty_aux(grid, camera, background, dirs, basis):
    n_rays = dirs.shape[0]
    pixel = np.tile(background, (n_rays, 1))
    image_preclamp = pixel.reshape(camera.height, camera.width, 3)
    return RenderAux(
        grid=grid, grid_version=grid.version,
        height=camera.height, width=camera.width,
        background=background, ray_origin=camera.translation.copy(),
        ray_dirs=dirs, ray_basis=basis,
        counts=np.zeros(n_rays, np.int64), offsets=np.zeros(n_rays, np.int64),
        t_resid=np.ones(n_rays),
        ray_id=np.zeros(0, np.int64), t=np.zeros(0), delta=np.zeros(0),
        raw_density=np.zeros(0), sigma=np.zeros(0), rgb=np.zeros((0, 3)),
        weight=np.zeros(0), trans=np.zeros(0),
        corner_idx=np.zeros((0, 8), np.int64), corner_w=np.zeros((0, 8)),
        image_preclamp=image_preclamp,
    )


def render_view(grid: VoxelGrid, camera: Camera, step: float | None = None,
                background=(0.0, 0.0, 0.0)):
    """Render all pixels of `camera`, returning (image in [0,1], RenderAux).

    Deterministic given (grid, camera, step, background). `step` defaults
    to half the smallest voxel edge.
    """
    if step is None:
        step = 0.5 * float(grid.voxel_edge().min())
    background = np.asarray(background, dtype=np.float64)
    origin = camera.translation
    dirs = camera.ray_directions()
    n_rays = dirs.shape[0]
    basis = sh_basis(dirs, grid.sh_degree)                 # (R, B)

    t_enter, t_exit = ray_aabb(origin[None], dirs, grid.bbox_min, grid.bbox_max)
    t0 = np.maximum(np.maximum(t_enter, camera.near), 0.0)
    t1 = np.minimum(t_exit, camera.far)
    counts, offsets, ray_id, ts = _sample_ts(t0, t1, step)
    if ts.shape[0] == 0:
        aux = _empty_aux(grid, camera, background, dirs, basis)
        return np.clip(aux.image_preclamp, 0.0, 1.0), aux

    positions = origin[None, :] + ts[:, None] * dirs[ray_id]
    corner_idx, corner_w = trilinear_footprint(grid, positions)
    dens_flat = grid.density.reshape(-1).astype(np.float64)
    raw = (dens_flat[corner_idx] * corner_w).sum(axis=1)
    sigma = activate_density(raw)

    sh_flat = grid.sh_coeffs.reshape(grid.n_voxels, 3, grid.n_bases)
    rgb = np.empty((ts.shape[0], 3), dtype=np.float64)
    for lo in range(0, ts.shape[0], _SCATTER_CHUNK):
        hi = min(lo + _SCATTER_CHUNK, ts.shape[0])
        sh = np.einsum("ncij,nc->nij", sh_flat[corner_idx[lo:hi]], corner_w[lo:hi])
        rgb[lo:hi] = np.einsum("nij,nj->ni", sh, basis[ray_id[lo:hi]])

    delta = np.full(ts.shape[0], step, dtype=np.float64)
    sdelta = sigma * delta
    cum = np.cumsum(sdelta)
    start = offsets.clip(max=ts.shape[0] - 1)
    base = np.where(counts > 0, cum[start] - sdelta[start], 0.0)
    cum_after = cum - base[ray_id]             # inclusive optical depth per ray
    trans = np.exp(-(cum_after - sdelta))
    alpha = 1.0 - np.exp(-sdelta)
    weight = trans * alpha

    keep = trans >= EARLY_STOP_T
    if not np.all(keep):
        # keep is a per-ray prefix because T is non-increasing
        ray_id = ray_id[keep]
        counts = np.bincount(ray_id, minlength=n_rays).astype(np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        last_after = np.zeros(n_rays)
        np.maximum.at(last_after, ray_id, cum_after[keep])
        t_resid = np.where(counts > 0, np.exp(-last_after), 1.0)
        ts, delta, raw, sigma = ts[keep], delta[keep], raw[keep], sigma[keep]
        rgb, weight, trans = rgb[keep], weight[keep], trans[keep]
        corner_idx, corner_w = corner_idx[keep], corner_w[keep]
    else:
        ends = (offsets + counts - 1).clip(min=0)
        t_resid = np.where(counts > 0, np.exp(-cum_after[ends]), 1.0)

    pixel = np.stack([np.bincount(ray_id, weights=weight * rgb[:, c],
                                  minlength=n_rays) for c in range(3)], axis=1)
    pixel += t_resid[:, None] * background[None, :]
    image_preclamp = pixel.reshape(camera.height, camera.width, 3)
    image = np.clip(image_preclamp, 0.0, 1.0)

    aux = RenderAux(
        grid=grid, grid_version=grid.version,
        height=camera.height, width=camera.width,
        background=background, ray_origin=origin.copy(), ray_dirs=dirs,
        ray_basis=basis, counts=counts, offsets=offsets, t_resid=t_resid,
        ray_id=ray_id, t=ts, delta=delta, raw_density=raw, sigma=sigma,
        rgb=rgb, weight=weight, trans=trans,
        corner_idx=corner_idx, corner_w=corner_w,
        image_preclamp=image_preclamp,
    )
    return image, aux


def clamp_backward_mask(image_preclamp: np.ndarray) -> np.ndarray:
    """Pass-through mask of the final [0,1] clamp: 1 strictly inside (0,1)."""
    return ((image_preclamp > 0.0) & (image_preclamp < 1.0)).astype(np.float64)


def _masked_pixel_grads(aux: RenderAux, pixel_grad: np.ndarray) -> np.ndarray:
    """Clamp-masked loss gradient per ray, shape (R, 3)."""
    aux.check_fresh()
    pixel_grad = np.asarray(pixel_grad, dtype=np.float64)
    if pixel_grad.shape != (aux.height, aux.width, 3):
        raise DimensionError(f"pixel_grad shape {pixel_grad.shape} != "
                             f"{(aux.height, aux.width, 3)}")
    return (pixel_grad * clamp_backward_mask(aux.image_preclamp)).reshape(-1, 3)


def per_sample_radiance_grads(aux: RenderAux, pixel_grad: np.ndarray) -> np.ndarray:
    """d(loss)/d(sample radiance) for every recorded sample, shape (n, 3).

    pixel_grad is w.r.t. the clamped image; the clamp mask is applied here.
    """
    g = _masked_pixel_grads(aux, pixel_grad)
    return aux.weight[:, None] * g[aux.ray_id]


def backward_radiance(aux: RenderAux, pixel_grad: np.ndarray) -> np.ndarray:
    """Gradient of a pixel loss w.r.t. grid.sh_coeffs, shape (nx,ny,nz,3,B).

    Exact adjoint of the forward chain (clamp -> composite -> SH ->
    trilinear footprint) for the recorded samples; density gets no
    gradient here. Raises StaleAuxError when the grid changed since the
    forward pass.
    """
    g_rgb = per_sample_radiance_grads(aux, pixel_grad)     # (n, 3)
    grid = aux.grid
    buf = np.zeros((grid.n_voxels, 3, grid.n_bases), dtype=np.float64)
    basis = aux.ray_basis[aux.ray_id]                      # (n, B)
    for lo in range(0, aux.n_samples, _SCATTER_CHUNK):
        hi = min(lo + _SCATTER_CHUNK, aux.n_samples)
        # (m, 8, 3, B) contribution = corner_w * g_rgb[:, c] * basis[:, b]
        contrib = (aux.corner_w[lo:hi, :, None, None]
                   * g_rgb[lo:hi, None, :, None]
                   * basis[lo:hi, None, None, :])
        np.add.at(buf, aux.corner_idx[lo:hi].reshape(-1),
                  contrib.reshape(-1, 3, grid.n_bases))
    return buf.reshape(grid.dims + (3, grid.n_bases))


def backward_full(aux: RenderAux, pixel_grad: np.ndarray):
    """(sh_grad, density_grad) for pretraining, where density is still free.

    density_grad is w.r.t. the raw stored values (ReLU subgradient: zero
    at and below raw = 0).
    """
    sh_grad = backward_radiance(aux, pixel_grad)
    g_pixel = _masked_pixel_grads(aux, pixel_grad)[aux.ray_id]   # (n, 3)

    # suffix color S_k = sum_{i>k} w_i rgb_i + T_resid * bg, via prefix sums
    n = aux.n_samples
    wrgb = aux.weight[:, None] * aux.rgb
    if n:
        cum = np.cumsum(wrgb, axis=0)
        start = aux.offsets.clip(max=n - 1)
        base = np.where(aux.counts[:, None] > 0, cum[start] - wrgb[start], 0.0)
        prefix_incl = cum - base[aux.ray_id]
    else:
        prefix_incl = wrgb
    pixel_pre = aux.image_preclamp.reshape(-1, 3)
    suffix = pixel_pre[aux.ray_id] - prefix_incl

    # dpixel/dsigma_k = delta_k * (T_k e^{-sigma_k delta_k} rgb_k - S_k)
    att = np.exp(-aux.sigma * aux.delta)
    dpix_dsigma = aux.delta[:, None] * (aux.trans[:, None] * att[:, None] * aux.rgb
                                        - suffix)
    g_sigma = (dpix_dsigma * g_pixel).sum(axis=1)
    g_raw = np.where(aux.raw_density > 0.0, g_sigma, 0.0)

    grid = aux.grid
    dbuf = np.zeros(grid.n_voxels, dtype=np.float64)
    np.add.at(dbuf, aux.corner_idx.reshape(-1),
              (aux.corner_w * g_raw[:, None]).reshape(-1))
    return sh_grad, dbuf.reshape(grid.dims)
