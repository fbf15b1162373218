import numpy as np
import pytest

from voxstyle.fixtures import (
    StyleKind,
    build_occlusion_scene,
    build_scene,
    build_style_image,
    single_box_spec,
    two_box_spec,
)


@pytest.fixture(scope="session")
def box_scene():
    return build_scene(single_box_spec(image_size=24, dims=(16, 16, 16)))


@pytest.fixture(scope="session")
def two_box_scene():
    return build_scene(two_box_spec(image_size=24, dims=(16, 16, 16)))


@pytest.fixture(scope="session")
def occlusion():
    return build_occlusion_scene(image_size=32)


@pytest.fixture(scope="session")
def stripes_style():
    return build_style_image(StyleKind.STRIPES, seed=3, size=24)


@pytest.fixture(scope="session")
def dots_style():
    return build_style_image(StyleKind.DOTS, seed=5, size=24)


def random_grid(seed=0, dims=(8, 8, 8), sh_degree=1, sigma_scale=2.0):
    """Moderately dense random grid whose renders stay strictly inside (0, 1)
    and far from the early-termination threshold."""
    from voxstyle.grid import VoxelGrid

    rng = np.random.default_rng(seed)
    grid = VoxelGrid.empty(dims, sh_degree=sh_degree)
    grid.density = rng.uniform(0.1, sigma_scale, dims).astype(np.float32)
    b = grid.n_bases
    sh = rng.uniform(0.5, 1.5, dims + (3, b))
    sh[..., 1:] *= 0.1
    grid.sh_coeffs = sh.astype(np.float32)
    return grid
