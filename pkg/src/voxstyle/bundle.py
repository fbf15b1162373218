"""View bundle and grid checkpoint directory layouts.

A bundle holds one scene's per-view data:
  views/NNN.png               8-bit RGB ground truth
  masks/NNN.png               8-bit single channel, value = label
  features/NNN.<name>.ctns    optional float32 feature tensors
  cameras.json                per-view camera parameters

A grid checkpoint is a directory with density.ctns, sh.ctns, and meta.json
(dims, bbox, SH degree, frozen flag).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .ctns import read_ctns, write_ctns
from .errors import FormatError
from .feat import FeatureMap, FeatureSpace, LabelMask
from .grid import VoxelGrid, num_sh_bases
from .render import Camera


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path, mask: LabelMask) -> None:
    if mask.labels.max(initial=0) > 255:
        raise FormatError("mask labels exceed 8-bit PNG range")
    Image.fromarray(mask.labels.astype(np.uint8), mode="L").save(path)


def load_mask(path) -> LabelMask:
    with Image.open(path) as im:
        return LabelMask(np.asarray(im.convert("L"), dtype=np.int32))


def _camera_dict(camera: Camera) -> dict:
    return {
        "rotation": [float(v) for v in camera.rotation.reshape(-1)],
        "translation": [float(v) for v in camera.translation],
        "focal": float(camera.focal),
        "width": camera.width, "height": camera.height,
        "near": float(camera.near), "far": float(camera.far),
    }


def _camera_from_dict(d: dict) -> Camera:
    return Camera(
        rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.asarray(d["translation"], dtype=np.float64),
        focal=float(d["focal"]), width=int(d["width"]), height=int(d["height"]),
        near=float(d["near"]), far=float(d["far"]))


def save_cameras(path, cameras: list[Camera]) -> None:
    payload = {"views": [_camera_dict(c) for c in cameras]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_cameras(path) -> list[Camera]:
    try:
        payload = json.loads(Path(path).read_text())
        return [_camera_from_dict(d) for d in payload["views"]]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed cameras.json ({exc})") from exc


@dataclass
class BundleView:
    """One loaded bundle entry."""

    camera: Camera
    image: np.ndarray
    mask: LabelMask
    features: dict[str, np.ndarray]


def save_bundle(root, cameras: list[Camera], images: list[np.ndarray],
                masks: list[LabelMask],
                features: dict[str, list[np.ndarray]] | None = None) -> None:
    """Write a complete bundle; `features` maps extractor name to one
    tensor per view."""
    root = Path(root)
    (root / "views").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    if not (len(cameras) == len(images) == len(masks)):
        raise FormatError("bundle views, images, and masks must align")
    save_cameras(root / "cameras.json", cameras)
    for i, (img, mask) in enumerate(zip(images, masks)):
        save_image(root / "views" / f"{i:03d}.png", img)
        save_mask(root / "masks" / f"{i:03d}.png", mask)
    if features:
        (root / "features").mkdir(exist_ok=True)
        for name, tensors in features.items():
            if len(tensors) != len(cameras):
                raise FormatError(f"feature set {name!r} must cover every view")
            for i, tensor in enumerate(tensors):
                write_ctns(root / "features" / f"{i:03d}.{name}.ctns",
                           np.asarray(tensor, dtype=np.float32))


def load_bundle(root) -> list[BundleView]:
    """Load and validate a bundle directory."""
    root = Path(root)
    cam_path = root / "cameras.json"
    if not cam_path.exists():
        raise FormatError(f"{root}: missing cameras.json")
    cameras = load_cameras(cam_path)
    out = []
    for i, camera in enumerate(cameras):
        img_path = root / "views" / f"{i:03d}.png"
        mask_path = root / "masks" / f"{i:03d}.png"
        if not img_path.exists():
            raise FormatError(f"{root}: missing view image {img_path.name}")
        if not mask_path.exists():
            raise FormatError(f"{root}: missing mask {mask_path.name}")
        image = load_image(img_path)
        if image.shape[:2] != (camera.height, camera.width):
            raise FormatError(f"{root}: view {i} image dims do not match camera")
        mask = load_mask(mask_path)
        features = {}
        fdir = root / "features"
        if fdir.exists():
            for f in sorted(fdir.glob(f"{i:03d}.*.ctns")):
                name = f.name[len(f"{i:03d}."):-len(".ctns")]
                features[name] = read_ctns(f)
        out.append(BundleView(camera=camera, image=image, mask=mask,
                              features=features))
    _check_feature_consistency(out)
    return out


def _check_feature_consistency(views: list[BundleView]) -> None:
    dims: dict[str, tuple] = {}
    for i, v in enumerate(views):
        for name, tensor in v.features.items():
            if name in dims and tensor.shape[-1] != dims[name][-1]:
                raise FormatError(f"feature {name!r} channel count differs "
                                  f"between views (view {i})")
            dims.setdefault(name, tensor.shape)


def feature_map_from_tensor(tensor: np.ndarray,
                            space: FeatureSpace = FeatureSpace.TEXTURE) -> FeatureMap:
    if tensor.ndim != 3:
        raise FormatError(f"feature tensor must be (H, W, C), got {tensor.shape}")
    return FeatureMap(np.asarray(tensor, dtype=np.float64), space)


def save_grid(root, grid: VoxelGrid) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_ctns(root / "density.ctns", grid.density)
    write_ctns(root / "sh.ctns", grid.sh_coeffs.reshape(
        grid.n_voxels, 3, grid.n_bases))
    meta = {
        "dims": list(grid.dims),
        "bbox_min": [float(v) for v in grid.bbox_min],
        "bbox_max": [float(v) for v in grid.bbox_max],
        "sh_degree": grid.sh_degree,
        "frozen_density": bool(grid.frozen_density),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_grid(root) -> VoxelGrid:
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{root}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
        dims = tuple(int(v) for v in meta["dims"])
        degree = int(meta["sh_degree"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{root}: malformed meta.json ({exc})") from exc
    density = read_ctns(root / "density.ctns")
    sh = read_ctns(root / "sh.ctns")
    if density.shape != dims:
        raise FormatError(f"{root}: density shape {density.shape} != dims {dims}")
    b = num_sh_bases(degree)
    want = (int(np.prod(dims)), 3, b)
    if sh.shape != want:
        raise FormatError(f"{root}: sh shape {sh.shape} != {want}")
    return VoxelGrid(
        dims=dims,
        bbox_min=np.asarray(meta["bbox_min"], dtype=np.float64),
        bbox_max=np.asarray(meta["bbox_max"], dtype=np.float64),
        density=density,
        sh_coeffs=sh.reshape(dims + (3, b)),
        sh_degree=degree,
        frozen_density=bool(meta.get("frozen_density", False)),
    )
