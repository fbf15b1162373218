"""Dense voxel radiance field: storage, trilinear sampling, SH radiance.

The field stores a raw (pre-activation) density and per-channel spherical
harmonics coefficients at the nodes of a regular lattice spanning an
axis-aligned bounding box. Node (i, j, k) sits at
bbox_min + (i, j, k) / (dims - 1) * (bbox_max - bbox_min), so `dims` counts
lattice nodes per axis and a grid needs at least 2 per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, OutOfBoundsError

# Real SH basis constants, degree 0..2 ("hard" normalization).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)

MAX_SH_DEGREE = 2


def num_sh_bases(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_bases(n_bases: int) -> int:
    for degree in range(MAX_SH_DEGREE + 1):
        if num_sh_bases(degree) == n_bases:
            return degree
    raise DimensionError(f"no SH degree <= {MAX_SH_DEGREE} has {n_bases} bases")


def sh_basis(directions: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis at unit directions, shape (..., 3) -> (..., B)."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise DimensionError(f"SH degree {degree} outside supported range 0..{MAX_SH_DEGREE}")
    dirs = np.asarray(directions, dtype=np.float64)
    out = np.empty(dirs.shape[:-1] + (num_sh_bases(degree),), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    return out


@dataclass
class VoxelGrid:
    """Radiance field parameters on a dense lattice.

    density: (nx, ny, nz) float32, raw pre-activation values.
    sh_coeffs: (nx, ny, nz, 3, B) float32, per color channel SH coefficients.
    version increments on every parameter write so renders can detect
    stale backward passes.
    """

    dims: tuple[int, int, int]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    density: np.ndarray
    sh_coeffs: np.ndarray
    sh_degree: int = 1
    frozen_density: bool = False
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        if len(self.dims) != 3 or any(d < 2 for d in self.dims):
            raise DimensionError(f"grid dims must be 3 values >= 2, got {self.dims}")
        if not np.all(self.bbox_max > self.bbox_min):
            raise DimensionError("bbox_max must exceed bbox_min in every axis")
        b = num_sh_bases(self.sh_degree)
        if self.density.shape != self.dims:
            raise DimensionError(f"density shape {self.density.shape} != dims {self.dims}")
        if self.sh_coeffs.shape != self.dims + (3, b):
            raise DimensionError(
                f"sh_coeffs shape {self.sh_coeffs.shape} != {self.dims + (3, b)}"
            )
        self.density = np.ascontiguousarray(self.density, dtype=np.float32)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float32)

    @classmethod
    def empty(cls, dims, bbox_min=(0.0, 0.0, 0.0), bbox_max=(1.0, 1.0, 1.0),
              sh_degree=1, density_value=0.0) -> "VoxelGrid":
        dims = tuple(int(d) for d in dims)
        b = num_sh_bases(sh_degree)
        return cls(
            dims=dims,
            bbox_min=np.asarray(bbox_min, dtype=np.float64),
            bbox_max=np.asarray(bbox_max, dtype=np.float64),
            density=np.full(dims, density_value, dtype=np.float32),
            sh_coeffs=np.zeros(dims + (3, b), dtype=np.float32),
            sh_degree=sh_degree,
        )

    @property
    def n_bases(self) -> int:
        return num_sh_bases(self.sh_degree)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_edge(self) -> np.ndarray:
        """Node spacing per axis."""
        return (self.bbox_max - self.bbox_min) / (np.array(self.dims) - 1)

    def node_positions(self) -> np.ndarray:
        """World positions of all lattice nodes, shape (nx, ny, nz, 3)."""
        axes = [
            np.linspace(self.bbox_min[a], self.bbox_max[a], self.dims[a])
            for a in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def world_to_grid(self, positions: np.ndarray) -> np.ndarray:
        return (np.asarray(positions, dtype=np.float64) - self.bbox_min) \
            / (self.bbox_max - self.bbox_min) * (np.array(self.dims) - 1)

    def contains(self, positions: np.ndarray) -> np.ndarray:
        p = np.asarray(positions, dtype=np.float64)
        return np.all((p >= self.bbox_min) & (p <= self.bbox_max), axis=-1)

    def bump_version(self):
        self.version += 1

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(
            dims=self.dims,
            bbox_min=self.bbox_min.copy(),
            bbox_max=self.bbox_max.copy(),
            density=self.density.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            sh_degree=self.sh_degree,
            frozen_density=self.frozen_density,
            version=self.version,
        )


@dataclass
class SamplePoint:
    """One ray-marching sample: world position, unit direction, step length."""

    position: np.ndarray
    direction: np.ndarray
    step: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise DimensionError(f"sample direction norm {norm} not unit within 1e-6")
        if not self.step > 0:
            raise DimensionError(f"sample step must be positive, got {self.step}")


# Corner offsets of one lattice cell, fixed order (z fastest).
_CORNERS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


def trilinear_footprint(grid: VoxelGrid, positions: np.ndarray):
    """Flat node indices and trilinear weights of the 8 cell corners.

    positions: (n, 3) world points inside the bbox.
    Returns (indices (n, 8) int64 into flattened (nx*ny*nz), weights (n, 8)).
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    inside = grid.contains(pos)
    if not np.all(inside):
        bad = pos[~inside][0]
        raise OutOfBoundsError(f"position {bad} outside bbox "
                               f"[{grid.bbox_min}, {grid.bbox_max}]")
    u = grid.world_to_grid(pos)
    dims = np.array(grid.dims)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
    frac = np.clip(u - i0, 0.0, 1.0)

    corners = i0[:, None, :] + _CORNERS[None, :, :]          # (n, 8, 3)
    # weight per axis: (1 - f) for offset 0, f for offset 1
    axis_w = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    weights = axis_w.prod(axis=2)                             # (n, 8)
    nx, ny, nz = grid.dims
    flat = (corners[..., 0] * ny + corners[..., 1]) * nz + corners[..., 2]
    return flat, weights


def trilinear_sample_many(grid: VoxelGrid, positions: np.ndarray):
    """Vectorized trilinear interpolation of density and SH coefficients.

    Returns (density_raw (n,), sh (n, 3, B)) in float64.
    """
    flat, weights = trilinear_footprint(grid, positions)
    density = (grid.density.reshape(-1)[flat] * weights).sum(axis=1)
    sh_flat = grid.sh_coeffs.reshape(grid.n_voxels, 3, grid.n_bases)
    sh = np.einsum("ncij,nc->nij", sh_flat[flat].astype(np.float64), weights)
    return density, sh


def trilinear_sample(grid: VoxelGrid, position: np.ndarray):
    """Interpolate density and SH coefficients at one world point.

    Reproduces stored node values exactly when `position` is a lattice node.
    Raises OutOfBoundsError outside the bbox.
    """
    density, sh = trilinear_sample_many(grid, np.asarray(position)[None, :])
    return float(density[0]), sh[0]


def eval_radiance(sh: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """View-dependent radiance: rgb[ch] = sum_b sh[ch, b] * Y_b(direction).

    Values are returned unclamped; clamping to [0, 1] happens once after
    volume compositing.
    """
    sh = np.asarray(sh, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(direction))
    if abs(norm - 1.0) > 1e-6:
        raise DimensionError(f"direction norm {norm} not unit within 1e-6")
    if sh.ndim != 2 or sh.shape[0] != 3:
        raise DimensionError(f"sh must be (3, B), got {sh.shape}")
    degree = sh_degree_from_bases(sh.shape[1])
    basis = sh_basis(direction, degree)
    return sh @ basis


def activate_density(density_raw):
    """ReLU activation mapping raw stored density to sigma >= 0."""
    return np.maximum(density_raw, 0.0)
