import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from voxstyle.bundle import load_grid, save_grid
from voxstyle.ctns import read_ctns, write_ctns
from voxstyle.errors import ChecksumError, FormatError
from voxstyle.grid import VoxelGrid


@pytest.mark.parametrize("dtype,values", [
    (np.float32, [[1.5, -2.25], [0.0, 3e7]]),
    (np.uint8, [[0, 255], [7, 128]]),
    (np.int32, [[-5, 0], [2**30, -2**30]]),
])
def test_round_trip_bit_identical(tmp_path, dtype, values):
    path = tmp_path / "t.ctns"
    arr = np.array(values, dtype=dtype)
    write_ctns(path, arr)
    back = read_ctns(path)
    assert back.dtype == arr.dtype
    assert np.array_equal(back, arr)
    write_ctns(tmp_path / "t2.ctns", back)
    assert (tmp_path / "t.ctns").read_bytes() == (tmp_path / "t2.ctns").read_bytes()


@settings(max_examples=25, deadline=None)
@given(arr=arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_property(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("ctns") / "p.ctns"
    write_ctns(path, arr)
    assert np.array_equal(read_ctns(path), arr)


def test_crc_corruption_detected(tmp_path):
    path = tmp_path / "t.ctns"
    write_ctns(path, np.arange(12, dtype=np.float32))
    blob = bytearray(path.read_bytes())
    blob[-10] ^= 0xFF                      # flip a payload byte
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        read_ctns(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "t.ctns"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        read_ctns(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.ctns"
    write_ctns(path, np.arange(12, dtype=np.float32))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        read_ctns(path)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(FormatError):
        write_ctns(tmp_path / "t.ctns", np.array(["a", "b"]))


def test_grid_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    grid = VoxelGrid.empty((4, 5, 6), bbox_min=(0, -1, 0), bbox_max=(2, 1, 1))
    grid.density = rng.normal(size=grid.dims).astype(np.float32)
    grid.sh_coeffs = rng.normal(size=grid.sh_coeffs.shape).astype(np.float32)
    grid.frozen_density = True
    save_grid(tmp_path / "ckpt", grid)
    back = load_grid(tmp_path / "ckpt")
    assert back.dims == grid.dims
    assert np.array_equal(back.density, grid.density)
    assert np.array_equal(back.sh_coeffs, grid.sh_coeffs)
    assert np.array_equal(back.bbox_min, grid.bbox_min)
    assert back.frozen_density


def test_checkpoint_round_trip_rerenders_identically(tmp_path):
    from conftest import random_grid
    from voxstyle.render import Camera, render_view

    grid = random_grid(seed=3, dims=(6, 6, 6))
    cam = Camera.look_at(eye=(0.5, -1.5, 0.5), target=(0.5, 0.5, 0.5),
                         focal=12, width=12, height=12)
    before, _ = render_view(grid, cam)
    save_grid(tmp_path / "ckpt", grid)
    after, _ = render_view(load_grid(tmp_path / "ckpt"), cam)
    assert np.array_equal(before, after)


def test_grid_checkpoint_corruption(tmp_path):
    grid = VoxelGrid.empty((4, 4, 4))
    save_grid(tmp_path / "ckpt", grid)
    blob = bytearray((tmp_path / "ckpt" / "sh.ctns").read_bytes())
    blob[-6] ^= 0x01
    (tmp_path / "ckpt" / "sh.ctns").write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_grid(tmp_path / "ckpt")
