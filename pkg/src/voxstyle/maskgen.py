"""Label mask extraction from per-pixel semantic feature maps.

Two query styles: pick pixels in the image (their features become the
label prototypes), or supply label embeddings living in the same space as
the features. Both assign each pixel the label of its nearest prototype
in cosine distance. A single pixel query instead thresholds the distance
to produce a binary object mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, DimensionError
from .feat import FeatureMap, LabelMask
from .match import _distance_matrix

DEFAULT_PIXEL_QUERY_TAU = 0.3


@dataclass
class LabelEmbeddingSet:
    """Label ids, human-readable names, and their embedding vectors
    (one row per label, dimension = semantic feature channels)."""

    ids: np.ndarray
    names: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.ids.shape[0]:
            raise DimensionError("one embedding row per label id required")
        if len(self.names) != self.ids.shape[0]:
            raise DimensionError("one name per label id required")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateVectorError("zero-norm label embedding")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _nearest_prototype(sem: FeatureMap, prototypes: np.ndarray):
    """Per-pixel (argmin index, distance) against prototype rows."""
    d = _distance_matrix(sem.flat(), prototypes)
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(d.shape[0]), idx]


def mask_from_pixel_query(sem: FeatureMap, query_pixels,
                          tau: float = DEFAULT_PIXEL_QUERY_TAU) -> LabelMask:
    """Masks from user-picked pixels: (x, y, label) triples.

    Multiple queries: every pixel takes the label of the closest query
    feature (pure argmin, ties to the first query). A single query yields
    a binary mask: distance <= tau maps to 1, else 0.
    """
    if len(query_pixels) == 0:
        raise DimensionError("at least one query pixel required")
    protos = []
    labels = []
    for x, y, label in query_pixels:
        if not (0 <= x < sem.width and 0 <= y < sem.height):
            raise DimensionError(f"query pixel ({x},{y}) out of bounds")
        vec = sem.data[y, x]
        if np.linalg.norm(vec) == 0.0:
            raise DegenerateVectorError(f"zero-norm feature at query pixel ({x},{y})")
        protos.append(vec)
        labels.append(int(label))
    protos = np.stack(protos)

    idx, dist = _nearest_prototype(sem, protos)
    if len(query_pixels) == 1:
        out = (dist <= tau).astype(np.int32)
        return LabelMask(out.reshape(sem.height, sem.width), n_classes=1)
    out = np.asarray(labels, dtype=np.int32)[idx]
    return LabelMask(out.reshape(sem.height, sem.width), n_classes=max(labels))


def mask_from_embeddings(sem: FeatureMap, embeddings: LabelEmbeddingSet) -> LabelMask:
    """Per-pixel argmin of cosine distance over label embeddings; ties go
    to the smallest label id."""
    if embeddings.dim != sem.channels:
        raise DimensionError(f"embedding dim {embeddings.dim} != semantic "
                             f"channels {sem.channels}")
    order = np.argsort(embeddings.ids, kind="stable")
    idx, _ = _nearest_prototype(sem, embeddings.vectors[order])
    out = embeddings.ids[order][idx]
    return LabelMask(out.reshape(sem.height, sem.width),
                     n_classes=int(embeddings.ids.max()))
