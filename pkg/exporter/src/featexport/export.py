"""Batch export of feature tensors and text embeddings to CTNS files.

Outputs are keyed by image filename stem + extractor name, matching the
voxstyle view-bundle layout, and every file is written atomically
(tmp + rename). The manifest records each output's shape and extractor.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from voxstyle.ctns import write_ctns

from .encoders import SEMANTIC_NAME, TEXTURE_NAME, SemanticEncoder, TextureEncoder, embed_text

log = logging.getLogger(__name__)

TEXT_EMBEDDINGS_FILE = "labels.ctns"


@dataclass
class ExportManifest:
    """What was exported: inputs, extractor provenance, output shapes."""

    images: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    extractors: dict = field(default_factory=dict)
    outputs: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def record(self, path: Path, array: np.ndarray, extractor: str, source: str):
        self.outputs.append({
            "file": path.name,
            "shape": list(array.shape),
            "extractor": extractor,
            "source": source,
        })

    def save(self, out_dir: Path):
        payload = {
            "images": self.images, "labels": self.labels,
            "extractors": self.extractors, "outputs": self.outputs,
            "skipped": self.skipped,
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True))


def _write_atomic(path: Path, array: np.ndarray) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    write_ctns(tmp, array)
    os.replace(tmp, path)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _export_maps(image_paths, out_dir: Path, encoder, name: str,
                 manifest: ExportManifest) -> bool:
    ok = True
    for path in image_paths:
        path = Path(path)
        try:
            image = load_image(path)
        except Exception as exc:
            log.error("skipping unreadable image %s: %s", path, exc)
            manifest.skipped.append(path.name)
            ok = False
            continue
        feat = encoder(image)
        out = out_dir / f"{path.stem}.{name}.ctns"
        _write_atomic(out, feat)
        manifest.record(out, feat, name, path.name)
    return ok


def export_texture_features(image_paths, out_dir, encoder: TextureEncoder,
                            manifest: ExportManifest) -> bool:
    manifest.extractors[TEXTURE_NAME] = {
        "channels": encoder.channels,
        "resolution": "input / 4",
        "pretrained": encoder.pretrained,
    }
    return _export_maps(image_paths, Path(out_dir), encoder, TEXTURE_NAME, manifest)


def export_semantic_features(image_paths, out_dir, encoder: SemanticEncoder,
                             manifest: ExportManifest) -> bool:
    manifest.extractors[SEMANTIC_NAME] = {
        "channels": encoder.channels,
        "resolution": "per pixel",
    }
    return _export_maps(image_paths, Path(out_dir), encoder, SEMANTIC_NAME, manifest)


def export_text_embeddings(labels: list[str], out_dir,
                           encoder: SemanticEncoder,
                           manifest: ExportManifest) -> Path:
    rows = embed_text(list(labels), encoder)
    out = Path(out_dir) / TEXT_EMBEDDINGS_FILE
    _write_atomic(out, rows)
    Path(str(out) + ".labels.json").write_text(json.dumps(list(labels)))
    manifest.labels = list(labels)
    manifest.record(out, rows, SEMANTIC_NAME, "text")
    return out


def run_export(image_dir, out_dir, texture=True, semantic=True,
               labels=None, seed=0, vgg_weights=None,
               semantic_weights=None) -> int:
    """Export everything requested; returns a process exit code."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_paths = sorted(
        p for p in Path(image_dir).iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    manifest = ExportManifest(images=[p.name for p in image_paths])
    ok = True
    if texture:
        enc = TextureEncoder(weights_path=vgg_weights, seed=seed)
        ok &= export_texture_features(image_paths, out_dir, enc, manifest)
    if semantic or labels:
        enc = SemanticEncoder(weights_path=semantic_weights, seed=seed + 1)
        if semantic:
            ok &= export_semantic_features(image_paths, out_dir, enc, manifest)
        if labels:
            export_text_embeddings(labels, out_dir, enc, manifest)
    manifest.save(out_dir)
    return 0 if ok else 1
