"""Command-line surface: pretrain, stylize, render, mask, audit.

Exit codes are stable across commands: 0 success, 2 malformed input or
contract violation, 3 numerical failure. Every command takes --seed and
is bit-reproducible given equal inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bundle as bio
from .errors import (
    ConfigurationError,
    FormatError,
    InputError,
    NumericalError,
)
from .feat import Extractor, FeatureSpace, LabelMask, extract
from .loss import PRESERVE, LossConfig, StyleBinding, TaskMode
from .maskgen import (
    DEFAULT_PIXEL_QUERY_TAU,
    LabelEmbeddingSet,
    mask_from_embeddings,
    mask_from_pixel_query,
)
from .stylize import (
    TaskSpec,
    View,
    color_transfer,
    finetune,
    gradient_audit,
    prepare_views,
    pretrain,
)
from .ctns import read_ctns
from .grid import VoxelGrid
from .render import render_view

SEMANTIC_FEATURE_NAME = "semantic-pixel"


def _texture_extractor(seed: int) -> Extractor:
    return Extractor.conv_bank(seed=seed + 1000)


def _semantic_extractor() -> Extractor:
    return Extractor.color_quant()


def _views_from_bundle(path) -> list[View]:
    entries = bio.load_bundle(path)
    return [View(camera=e.camera, gt_image=e.image, mask=e.mask) for e in entries]


def _load_task_file(path) -> dict:
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot parse task file ({exc})") from exc
    if "mode" not in spec or "labels" not in spec:
        raise FormatError(f"{path}: task file needs 'mode' and 'labels'")
    return spec


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def _build_task(spec: dict, base: Path, args, views: list[View]):
    """Assemble the TaskSpec from a task file + flag overrides, applying the
    color-transfer preprocessing policy to the ground-truth views."""
    mode = TaskMode(args.mode or spec["mode"])
    cfg = LossConfig(
        lam=args.lam if args.lam is not None else float(spec.get("lambda", 0.005)),
        lam_tv=args.lam_tv if args.lam_tv is not None
        else float(spec.get("lambda_tv", 1.0)),
        alpha=args.alpha if args.alpha is not None else float(spec.get("alpha", 0.5)),
    )
    steps = args.steps if args.steps is not None else int(spec.get("steps", 150))
    lr = float(spec.get("lr", 1e-2))
    do_transfer = spec.get("color_transfer", True) and not args.no_color_transfer

    tex_x = _texture_extractor(args.seed)
    sem_x = _semantic_extractor()

    bindings: dict[int, object] = {}
    style_entries: dict[int, dict] = {}
    for entry in spec["labels"]:
        label = int(entry["label"])
        if entry.get("preserve", False):
            bindings[label] = PRESERVE
            continue
        if "style_image" not in entry:
            raise FormatError(f"label {label}: need 'preserve' or 'style_image'")
        style_entries[label] = entry

    present = sorted({m for v in views for m in v.mask.present_labels()})
    unbound = [m for m in present
               if m not in bindings and m not in style_entries]
    if unbound:
        raise ConfigurationError(f"mask labels {unbound} are not bound in the task")

    images = [v.gt_image for v in views]
    masks = [v.mask for v in views]
    for label, entry in sorted(style_entries.items()):
        style_img = bio.load_image(_resolve(base, entry["style_image"]))
        style_mask = None
        if "style_mask" in entry:
            style_mask = bio.load_mask(_resolve(base, entry["style_mask"]))
        if do_transfer:
            target_label = label if style_mask is not None else None
            images, _, _ = color_transfer(
                images, style_img, region_masks=masks, region_label=label,
                style_mask=style_mask if style_mask is not None else None,
                style_label=target_label)
        bindings[label] = StyleBinding(
            tex_features=extract(tex_x, style_img),
            sem_features=extract(sem_x, style_img)
            if mode is TaskMode.SEMANTIC_AWARE else None,
            style_mask=style_mask,
            image=style_img,
        )
    for v, img in zip(views, images):
        v.gt_image = img
    prepare_views(views, tex_x)

    task = TaskSpec(mode=mode, bindings=bindings, config=cfg,
                    texture_extractor=tex_x,
                    semantic_extractor=sem_x if mode is TaskMode.SEMANTIC_AWARE
                    else None,
                    steps=steps, lr=lr)
    return task, views


def _jsonl_writer(path):
    if path is None:
        return None, lambda rec: None
    f = open(path, "w")
    return f, lambda rec: (f.write(json.dumps(rec, sort_keys=True) + "\n"))


def cmd_pretrain(args) -> int:
    views = _views_from_bundle(args.bundle)
    rng = np.random.default_rng(args.seed)
    dims = (args.dims,) * 3
    grid = VoxelGrid.empty(dims, sh_degree=args.degree, density_value=0.0)
    grid.density += np.float32(0.05)
    grid.sh_coeffs += rng.normal(0.0, 0.05, grid.sh_coeffs.shape).astype(np.float32)
    log_f, log_cb = _jsonl_writer(args.log)
    try:
        pretrain(grid, views, steps=args.steps, lr=args.lr, log_cb=log_cb)
    finally:
        if log_f:
            log_f.close()
    bio.save_grid(args.grid_out, grid)
    print(f"pretrained grid written to {args.grid_out}")
    return 0


def cmd_stylize(args) -> int:
    views = _views_from_bundle(args.bundle)
    grid = bio.load_grid(args.grid_in)
    spec = _load_task_file(args.task)
    task, views = _build_task(spec, Path(args.task).parent, args, views)

    out = Path(args.grid_out)
    out.mkdir(parents=True, exist_ok=True)
    before, _ = render_view(grid, views[0].camera, task.step_size, task.background)
    bio.save_image(out / "preview_before.png", before)

    log_f, log_cb = _jsonl_writer(args.log or out / "train_log.jsonl")
    try:
        finetune(grid, views, task, log_cb=log_cb)
    finally:
        if log_f:
            log_f.close()

    bio.save_grid(out, grid)
    after, _ = render_view(grid, views[0].camera, task.step_size, task.background)
    bio.save_image(out / "preview_after.png", after)
    print(f"stylized grid written to {out}")
    return 0


def cmd_render(args) -> int:
    grid = bio.load_grid(args.grid_in)
    cameras = bio.load_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cameras):
        image, _ = render_view(grid, cam, args.step)
        bio.save_image(out / f"{i:03d}.png", image)
    print(f"rendered {len(cameras)} views to {out}")
    return 0


def _semantic_maps(entries, name):
    maps = []
    for i, e in enumerate(entries):
        if name not in e.features:
            raise FormatError(f"view {i}: no '{name}' features in bundle; "
                              "run the exporter or pass --extractor")
        maps.append(bio.feature_map_from_tensor(e.features[name],
                                                FeatureSpace.SEMANTIC))
    return maps


def cmd_mask(args) -> int:
    entries = bio.load_bundle(args.bundle)
    maps = _semantic_maps(entries, args.extractor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.embeddings:
        vectors = read_ctns(args.embeddings)
        if vectors.ndim != 2:
            raise FormatError("embeddings tensor must be 2-D (labels x channels)")
        names_path = Path(str(args.embeddings) + ".labels.json")
        names = json.loads(names_path.read_text()) if names_path.exists() \
            else [f"label_{i}" for i in range(vectors.shape[0])]
        emb = LabelEmbeddingSet(ids=np.arange(vectors.shape[0]),
                                names=list(names),
                                vectors=vectors.astype(np.float64))
        masks = [mask_from_embeddings(m, emb) for m in maps]
    elif args.pixel:
        queries = []
        for q in args.pixel:
            parts = [int(v) for v in q.split(",")]
            if len(parts) == 2:
                parts.append(1)
            queries.append(tuple(parts))
        proto_map = maps[args.view]
        protos = [(x, y, lab) for x, y, lab in queries]
        masks = []
        for m in maps:
            # queries index the chosen view; reuse its feature vectors as
            # prototypes for every view by matching in feature space
            if m is proto_map:
                masks.append(mask_from_pixel_query(m, protos, tau=args.tau))
            else:
                masks.append(_mask_with_prototypes(m, proto_map, protos, args.tau))
    else:
        raise ConfigurationError("either --pixel or --embeddings is required")
    for i, mask in enumerate(masks):
        bio.save_mask(out / f"{i:03d}.png", mask)
    print(f"wrote {len(masks)} masks to {out}")
    return 0


def _mask_with_prototypes(sem, proto_map, queries, tau):
    """Label a view by the query-pixel features taken from another view."""
    vectors = np.stack([proto_map.data[y, x] for x, y, _ in queries])
    labels = [lab for _, _, lab in queries]
    emb = LabelEmbeddingSet(ids=np.asarray(labels, dtype=np.int32),
                            names=[str(x) for x in labels], vectors=vectors)
    if len(queries) == 1:
        from .match import _distance_matrix
        d = _distance_matrix(sem.flat(), vectors)[:, 0]
        return LabelMask((d <= tau).astype(np.int32)
                         .reshape(sem.height, sem.width), n_classes=1)
    return mask_from_embeddings(sem, emb)


def cmd_audit(args) -> int:
    views = _views_from_bundle(args.bundle)
    grid = bio.load_grid(args.grid_in)
    spec = _load_task_file(args.task)
    task, views = _build_task(spec, Path(args.task).parent, args, views)
    point = np.asarray([float(v) for v in args.point.split(",")])
    contributions = gradient_audit(grid, views, task, point)
    payload = [
        {"view": c.view_index, "weight": c.weight, "label": c.label,
         "grad": [float(g) for g in c.grad], "pixel": list(c.pixel)}
        for c in contributions
    ]
    print(json.dumps({"point": [float(v) for v in point],
                      "contributions": payload}, indent=2, sort_keys=True))
    return 0


def _add_task_flags(p):
    p.add_argument("--mode", choices=[m.value for m in TaskMode], default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-tv", dest="lam_tv", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--no-color-transfer", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxstyle",
        description="Controllable voxel radiance-field style transfer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="fit a grid to a view bundle")
    p.add_argument("bundle")
    p.add_argument("grid_out")
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=3e-2)
    p.add_argument("--log", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("stylize", help="masked style transfer on a pretrained grid")
    p.add_argument("bundle")
    p.add_argument("grid_in")
    p.add_argument("task")
    p.add_argument("grid_out")
    _add_task_flags(p)
    p.add_argument("--log", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("render", help="render a checkpoint from cameras.json")
    p.add_argument("grid_in")
    p.add_argument("cameras")
    p.add_argument("out")
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("mask", help="generate label masks from semantic features")
    p.add_argument("bundle")
    p.add_argument("out")
    p.add_argument("--pixel", action="append", default=None,
                   metavar="X,Y[,LABEL]")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--extractor", default=SEMANTIC_FEATURE_NAME)
    p.add_argument("--tau", type=float, default=DEFAULT_PIXEL_QUERY_TAU)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("audit", help="per-view gradient contributions at a 3D point")
    p.add_argument("grid_in")
    p.add_argument("bundle")
    p.add_argument("task")
    p.add_argument("--point", required=True, metavar="X,Y,Z")
    _add_task_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
