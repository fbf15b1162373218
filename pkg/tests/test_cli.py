import json
from pathlib import Path

import numpy as np
import pytest

from voxstyle.bundle import (
    load_grid,
    load_image,
    load_mask,
    save_bundle,
    save_grid,
    save_image,
    save_mask,
)
from voxstyle.cli import main
from voxstyle.ctns import write_ctns
from voxstyle.feat import Extractor, extract
from voxstyle.fixtures import (
    SceneSpec,
    StyleKind,
    build_occlusion_scene,
    build_scene,
    build_style_image,
    simulate_pretrained,
    single_box_spec,
)
from voxstyle.grid import VoxelGrid
from voxstyle.render import render_view


@pytest.fixture(scope="module")
def box_bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    scene = build_scene(single_box_spec(seed=0, image_size=24))
    save_bundle(root, scene.cameras, scene.gt_images, scene.masks)
    style = build_style_image(StyleKind.STRIPES, seed=3, size=24)
    save_image(root / "style.png", style.image)
    task = {
        "mode": "object-select",
        "lambda": 0.005, "lambda_tv": 1.0, "steps": 20, "lr": 0.01,
        "labels": [
            {"label": 0, "preserve": True},
            {"label": 1, "style_image": "style.png"},
        ],
    }
    (root / "task.json").write_text(json.dumps(task))
    return root, scene


@pytest.fixture(scope="module")
def pretrained_ckpt(tmp_path_factory, box_bundle):
    _, scene = box_bundle
    root = tmp_path_factory.mktemp("ckpt")
    grid = simulate_pretrained(scene, seed=0)
    save_grid(root / "grid", grid)
    return root / "grid"


# ----------------------------------------------------------------- pretrain

def test_pretrain_cmd(tmp_path, box_bundle):
    root, scene = box_bundle
    out = tmp_path / "grid"
    code = main(["pretrain", str(root), str(out), "--steps", "150",
                 "--log", str(tmp_path / "log.jsonl"), "--seed", "0"])
    assert code == 0
    grid = load_grid(out)
    assert grid.frozen_density
    mse = np.mean([
        float(((render_view(grid, cam)[0] - img) ** 2).mean())
        for cam, img in zip(scene.cameras, scene.gt_images)])
    psnr = -10 * np.log10(mse)
    assert psnr >= 30.0
    log_lines = (tmp_path / "log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) >= 1 and json.loads(log_lines[0])["step"] == 0


def test_pretrain_cmd_missing_cameras(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["pretrain", str(tmp_path / "empty"), str(tmp_path / "g")]) == 2


def test_pretrain_cmd_zero_steps(tmp_path, box_bundle):
    root, _ = box_bundle
    out = tmp_path / "grid0"
    assert main(["pretrain", str(root), str(out), "--steps", "0",
                 "--dims", "12", "--seed", "5"]) == 0
    grid = load_grid(out)
    rng = np.random.default_rng(5)
    expect = VoxelGrid.empty((12, 12, 12), sh_degree=1, density_value=0.0)
    expect.density += np.float32(0.05)
    expect.sh_coeffs += rng.normal(0.0, 0.05, expect.sh_coeffs.shape) \
        .astype(np.float32)
    assert np.array_equal(grid.density, expect.density)
    assert np.array_equal(grid.sh_coeffs, expect.sh_coeffs)


# ------------------------------------------------------------------ stylize

def test_stylize_cmd_and_determinism(tmp_path, box_bundle, pretrained_ckpt):
    root, scene = box_bundle
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["stylize", str(root), str(pretrained_ckpt),
                     str(root / "task.json"), str(out), "--seed", "0"])
        assert code == 0
        assert (out / "preview_before.png").exists()
        assert (out / "preview_after.png").exists()
        outs.append(out)
    for f in ("density.ctns", "sh.ctns", "train_log.jsonl",
              "preview_before.png", "preview_after.png"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    log = [json.loads(l) for l in
           (outs[0] / "train_log.jsonl").read_text().strip().splitlines()]
    assert len(log) == 20
    assert log[-1]["total"] < log[0]["total"]


def test_stylize_cmd_unbound_label(tmp_path, box_bundle, pretrained_ckpt):
    root, _ = box_bundle
    task = {"mode": "compositional", "steps": 2,
            "labels": [{"label": 0, "preserve": True}]}
    tpath = tmp_path / "bad_task.json"
    tpath.write_text(json.dumps(task))
    assert main(["stylize", str(root), str(pretrained_ckpt), str(tpath),
                 str(tmp_path / "out")]) == 2


def test_stylize_cmd_flag_overrides(tmp_path, box_bundle, pretrained_ckpt):
    root, _ = box_bundle
    out = tmp_path / "fast"
    code = main(["stylize", str(root), str(pretrained_ckpt),
                 str(root / "task.json"), str(out), "--steps", "2",
                 "--lambda", "0.001", "--lambda-tv", "0.5"])
    assert code == 0
    log = [json.loads(l) for l in
           (out / "train_log.jsonl").read_text().strip().splitlines()]
    assert len(log) == 2
    assert log[0]["lam"] == 0.001 and log[0]["lam_tv"] == 0.5


# ------------------------------------------------------------------- render

def test_render_cmd_matches_bundle(tmp_path, box_bundle):
    root, scene = box_bundle
    ckpt = tmp_path / "gt_grid"
    gt = scene.grid.copy()
    gt.frozen_density = True
    save_grid(ckpt, gt)
    out = tmp_path / "renders"
    assert main(["render", str(ckpt), str(root / "cameras.json"), str(out)]) == 0
    for i, img in enumerate(scene.gt_images):
        got = load_image(out / f"{i:03d}.png")
        mse = float(((got - img) ** 2).mean())
        assert -10 * np.log10(max(mse, 1e-12)) >= 40.0     # 8-bit quantization only


def test_render_cmd_empty_cameras(tmp_path):
    ckpt = tmp_path / "grid"
    save_grid(ckpt, VoxelGrid.empty((4, 4, 4)))
    (tmp_path / "cams.json").write_text(json.dumps({"views": []}))
    out = tmp_path / "renders"
    assert main(["render", str(ckpt), str(tmp_path / "cams.json"), str(out)]) == 0
    assert list(out.glob("*.png")) == []


def test_render_cmd_corrupt_checkpoint(tmp_path):
    ckpt = tmp_path / "grid"
    save_grid(ckpt, VoxelGrid.empty((4, 4, 4)))
    blob = bytearray((ckpt / "density.ctns").read_bytes())
    blob[-7] ^= 0x40
    (ckpt / "density.ctns").write_bytes(bytes(blob))
    (tmp_path / "cams.json").write_text(json.dumps({"views": []}))
    assert main(["render", str(ckpt), str(tmp_path / "cams.json"),
                 str(tmp_path / "out")]) == 2


# --------------------------------------------------------------------- mask

@pytest.fixture()
def semantic_bundle(tmp_path):
    """Two views whose semantic features are orthogonal in two regions."""
    scene = build_scene(SceneSpec(primitives=[], n_cameras=2, image_size=12))
    feats = []
    masks = []
    for _ in scene.cameras:
        f = np.zeros((12, 12, 4), dtype=np.float32)
        f[:, :6, 0] = 1.0
        f[:, 6:, 1] = 1.0
        feats.append(f)
        labels = np.zeros((12, 12), dtype=np.int32)
        labels[:, 6:] = 1
        from voxstyle.feat import LabelMask
        masks.append(LabelMask(labels))
    save_bundle(tmp_path / "b", scene.cameras, scene.gt_images, scene.masks,
                features={"sem-syn": feats})
    return tmp_path / "b", masks


def test_mask_cmd_pixel_query(tmp_path, semantic_bundle):
    root, expected = semantic_bundle
    out = tmp_path / "masks"
    code = main(["mask", str(root), str(out), "--pixel", "8,3",
                 "--extractor", "sem-syn"])
    assert code == 0
    for i, want in enumerate(expected):
        got = load_mask(out / f"{i:03d}.png")
        assert np.array_equal(got.labels, want.labels)


def test_mask_cmd_embeddings_oracle(tmp_path, semantic_bundle):
    root, expected = semantic_bundle
    emb = np.zeros((2, 4), dtype=np.float32)
    emb[0, 0] = 1.0
    emb[1, 1] = 1.0
    write_ctns(tmp_path / "emb.ctns", emb)
    out = tmp_path / "masks"
    code = main(["mask", str(root), str(out), "--embeddings",
                 str(tmp_path / "emb.ctns"), "--extractor", "sem-syn"])
    assert code == 0
    for i, want in enumerate(expected):
        got = load_mask(out / f"{i:03d}.png")
        assert np.array_equal(got.labels, want.labels)


def test_mask_cmd_wrong_embedding_dim(tmp_path, semantic_bundle):
    root, _ = semantic_bundle
    write_ctns(tmp_path / "emb.ctns", np.ones((2, 9), dtype=np.float32))
    assert main(["mask", str(root), str(tmp_path / "m"),
                 "--embeddings", str(tmp_path / "emb.ctns"),
                 "--extractor", "sem-syn"]) == 2


def test_mask_cmd_missing_features(tmp_path, box_bundle):
    root, _ = box_bundle
    assert main(["mask", str(root), str(tmp_path / "m"), "--pixel", "1,1"]) == 2


# -------------------------------------------------------------------- audit

@pytest.fixture(scope="module")
def occlusion_bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("occ")
    occ = build_occlusion_scene(image_size=32)
    save_bundle(root / "b", occ.scene.cameras, occ.scene.gt_images,
                occ.scene.masks)
    style = build_style_image(StyleKind.STRIPES, seed=3, size=32)
    save_image(root / "style.png", style.image)
    task = {"mode": "object-select", "steps": 1,
            "labels": [{"label": 0, "preserve": True},
                       {"label": 1, "style_image": str(root / "style.png")}]}
    (root / "task.json").write_text(json.dumps(task))
    grid = occ.scene.grid.copy()
    grid.sh_coeffs = grid.sh_coeffs + np.float32(0.3)
    grid.frozen_density = True
    save_grid(root / "grid", grid)
    return root, occ


def test_audit_cmd_dominance(capsys, occlusion_bundle):
    root, occ = occlusion_bundle
    point = ",".join(str(v) for v in occ.point)
    code = main(["audit", str(root / "grid"), str(root / "b"),
                 str(root / "task.json"), "--point", point,
                 "--no-color-transfer"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    by_label = {0: [], 1: []}
    for c in payload["contributions"]:
        by_label[c["label"]].append(c["weight"])
    assert min(by_label[0]) >= 10.0 * max(by_label[1])


def test_audit_cmd_point_outside(occlusion_bundle):
    root, _ = occlusion_bundle
    assert main(["audit", str(root / "grid"), str(root / "b"),
                 str(root / "task.json"), "--point", "7,7,7",
                 "--no-color-transfer"]) == 2


def test_audit_cmd_transparent_scene(tmp_path, capsys):
    scene = build_scene(SceneSpec(primitives=[], n_cameras=2, image_size=8))
    save_bundle(tmp_path / "b", scene.cameras, scene.gt_images, scene.masks)
    grid = scene.grid.copy()
    grid.frozen_density = True
    save_grid(tmp_path / "grid", grid)
    style = build_style_image(StyleKind.DOTS, seed=1, size=8)
    save_image(tmp_path / "style.png", style.image)
    task = {"mode": "object-select", "steps": 1,
            "labels": [{"label": 0, "preserve": True},
                       {"label": 1, "style_image": "style.png"}]}
    (tmp_path / "task.json").write_text(json.dumps(task))
    code = main(["audit", str(tmp_path / "grid"), str(tmp_path / "b"),
                 str(tmp_path / "task.json"), "--point", "0.5,0.5,0.5"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["contributions"] == []
