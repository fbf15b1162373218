import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from featexport import SEMANTIC_DIM, SemanticEncoder, TextureEncoder, embed_text
from featexport.cli import main
from voxstyle.ctns import read_ctns


def write_png(path, rng, h=64, w=64):
    arr = (rng.uniform(0, 1, (h, w, 3)) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


@pytest.fixture()
def image_dir(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "images"
    d.mkdir()
    write_png(d / "a.png", rng, 64, 64)
    write_png(d / "b.png", rng, 48, 32)
    return d


def test_export_texture_and_semantic(tmp_path, image_dir):
    out = tmp_path / "out"
    code = main(["export", "--images", str(image_dir), "--out", str(out),
                 "--texture", "--semantic"])
    assert code == 0
    tex_a = read_ctns(out / "a.texture-conv3.ctns")
    assert tex_a.shape == (16, 16, 256)          # conv3 block: input / 4
    tex_b = read_ctns(out / "b.texture-conv3.ctns")
    assert tex_b.shape == (12, 8, 256)
    sem_a = read_ctns(out / "a.semantic-pixel.ctns")
    assert sem_a.shape == (64, 64, SEMANTIC_DIM)  # per-pixel resolution

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["images"] == ["a.png", "b.png"]
    assert manifest["extractors"]["texture-conv3"]["channels"] == 256
    assert manifest["extractors"]["semantic-pixel"]["channels"] == SEMANTIC_DIM
    recorded = {o["file"]: o["shape"] for o in manifest["outputs"]}
    assert recorded["a.texture-conv3.ctns"] == [16, 16, 256]
    assert not list(out.glob("*.tmp"))           # atomic writes left no temps


def test_export_deterministic(tmp_path, image_dir):
    outs = []
    for name in ("o1", "o2"):
        out = tmp_path / name
        assert main(["export", "--images", str(image_dir), "--out", str(out),
                     "--texture", "--semantic", "--labels", "cat,sky"]) == 0
        outs.append(out)
    for f in sorted(outs[0].glob("*.ctns")):
        assert f.read_bytes() == (outs[1] / f.name).read_bytes(), f.name


def test_export_skips_unreadable_with_nonzero_exit(tmp_path, image_dir):
    (image_dir / "broken.png").write_bytes(b"not a png at all")
    out = tmp_path / "out"
    code = main(["export", "--images", str(image_dir), "--out", str(out),
                 "--texture"])
    assert code == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert "broken.png" in manifest["skipped"]
    assert (out / "a.texture-conv3.ctns").exists()   # others still exported


def test_export_empty_dir(tmp_path):
    (tmp_path / "none").mkdir()
    out = tmp_path / "out"
    code = main(["export", "--images", str(tmp_path / "none"), "--out", str(out),
                 "--texture", "--semantic"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["images"] == [] and manifest["outputs"] == []


def test_export_requires_something(tmp_path, image_dir):
    assert main(["export", "--images", str(image_dir),
                 "--out", str(tmp_path / "o")]) == 2


def test_text_embeddings(tmp_path, image_dir):
    out = tmp_path / "out"
    assert main(["export", "--images", str(image_dir), "--out", str(out),
                 "--semantic", "--labels", "cat,person,cat"]) == 0
    rows = read_ctns(out / "labels.ctns")
    sem = read_ctns(out / "a.semantic-pixel.ctns")
    assert rows.shape == (3, sem.shape[2])       # dim matches pixel features
    assert np.array_equal(rows[0], rows[2])      # duplicate words, same row
    names = json.loads((out / "labels.ctns.labels.json").read_text())
    assert names == ["cat", "person", "cat"]


def test_single_label_embedding():
    enc = SemanticEncoder()
    rows = embed_text(["horse"], enc)
    assert rows.shape == (1, SEMANTIC_DIM)
    with pytest.raises(ValueError):
        embed_text([], enc)


def test_weights_file_round_trip(tmp_path, image_dir):
    import torch
    enc = TextureEncoder(seed=3)
    torch.save(enc.trunk.state_dict(), tmp_path / "w.pth")
    enc2 = TextureEncoder(weights_path=str(tmp_path / "w.pth"))
    assert enc2.pretrained
    img = np.random.default_rng(1).uniform(0, 1, (32, 32, 3)).astype(np.float32)
    # same trunk weights, but the pretrained path applies input normalization
    a = enc.trunk(torch.from_numpy(img).permute(2, 0, 1)[None])
    b = enc2.trunk(torch.from_numpy(img).permute(2, 0, 1)[None])
    assert torch.equal(a, b)
