"""Nearest-neighbor feature matching in cosine distance.

Plain matching searches the whole style map per content pixel; the
semantic-aware variant restricts candidates to style pixels sharing the
content pixel's mask label and ranks them by a blend
alpha * texture_distance + (1 - alpha) * semantic_distance. Ties always
break to the smallest row-major linear index so results are reproducible
across implementations and platforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, DimensionError, EmptyCandidateError
from .feat import FeatureMap, LabelMask

log = logging.getLogger(__name__)

# Distance assigned to pairs involving a zero-norm vector: maximally far,
# so degenerate pixels never win a match.
ZERO_NORM_DISTANCE = 2.0


@dataclass
class MatchResult:
    """Per content pixel: matched style pixel and achieved distance.

    index_map[..., 0] is the style row, index_map[..., 1] the style column.
    candidate_counts maps each content label to the size of its style-side
    candidate set (0 means the unrestricted-texture fallback was used).
    """

    index_map: np.ndarray
    distance_map: np.ndarray
    candidate_counts: dict[int, int]

    def linear_indices(self, style_width: int) -> np.ndarray:
        return self.index_map[..., 0] * style_width + self.index_map[..., 1]


def cosine_distance(v1: np.ndarray, v2: np.ndarray) -> float:
    """1 - cos(angle) between two nonzero vectors; in [0, 2]."""
    v1 = np.asarray(v1, dtype=np.float64).reshape(-1)
    v2 = np.asarray(v2, dtype=np.float64).reshape(-1)
    if v1.shape != v2.shape:
        raise DimensionError(f"vector shapes differ: {v1.shape} vs {v2.shape}")
    n1 = np.dot(v1, v1)
    n2 = np.dot(v2, v2)
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateVectorError("cosine distance of a zero-norm vector")
    return 1.0 - float(np.dot(v1, v2) / np.sqrt(n1 * n2))


def _unit_rows(flat: np.ndarray):
    """Row-normalized copy plus a zero-norm row mask."""
    norms = np.linalg.norm(flat, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return flat / safe[:, None], zero


def _distance_matrix(content_flat: np.ndarray, style_flat: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances (n_content, n_style) with the zero-norm rule."""
    cu, czero = _unit_rows(content_flat)
    su, szero = _unit_rows(style_flat)
    d = 1.0 - cu @ su.T
    if np.any(czero) or np.any(szero):
        log.debug("zero-norm feature vectors in matching: %d content, %d style",
                  int(czero.sum()), int(szero.sum()))
        d[czero, :] = ZERO_NORM_DISTANCE
        d[:, szero] = ZERO_NORM_DISTANCE
    return d


def nnfm_match(f_r: FeatureMap, f_s: FeatureMap) -> MatchResult:
    """Exhaustive per-pixel argmin of cosine distance into the style map."""
    if f_r.channels != f_s.channels:
        raise DimensionError(f"channel mismatch {f_r.channels} vs {f_s.channels}")
    if f_s.height * f_s.width == 0:
        raise EmptyCandidateError("empty style feature map")
    d = _distance_matrix(f_r.flat(), f_s.flat())
    lin = np.argmin(d, axis=1)          # first occurrence = smallest linear index
    dist = d[np.arange(d.shape[0]), lin]
    index_map = np.stack([lin // f_s.width, lin % f_s.width], axis=1) \
        .reshape(f_r.height, f_r.width, 2).astype(np.int32)
    return MatchResult(index_map=index_map,
                       distance_map=dist.reshape(f_r.height, f_r.width),
                       candidate_counts={0: f_s.height * f_s.width})


def sannfm_match(f_r_tex: FeatureMap, f_r_sem: FeatureMap,
                 f_s_tex: FeatureMap, f_s_sem: FeatureMap,
                 m_r: LabelMask, m_s: LabelMask, alpha: float) -> MatchResult:
    """Label-restricted matching under the blended distance.

    For a content pixel with label m, candidates are style pixels with
    label m, ranked by alpha * D_tex + (1 - alpha) * D_sem. A label with
    no style candidates falls back to unrestricted texture-only matching
    for its pixels (recorded as candidate count 0).
    """
    if not 0.0 <= alpha <= 1.0:
        raise DimensionError(f"alpha must be in [0, 1], got {alpha}")
    for fm, mask, side in ((f_r_tex, m_r, "content"), (f_s_tex, m_s, "style")):
        if (fm.height, fm.width) != (mask.height, mask.width):
            raise DimensionError(f"{side} texture map dims {(fm.height, fm.width)} "
                                 f"!= mask dims {(mask.height, mask.width)}")
    if (f_r_sem.height, f_r_sem.width) != (f_r_tex.height, f_r_tex.width) or \
       (f_s_sem.height, f_s_sem.width) != (f_s_tex.height, f_s_tex.width):
        raise DimensionError("semantic maps must share dims with texture maps")
    if f_r_tex.channels != f_s_tex.channels:
        raise DimensionError("texture channel mismatch")
    if f_r_sem.channels != f_s_sem.channels:
        raise DimensionError("semantic channel mismatch")

    h, w = f_r_tex.height, f_r_tex.width
    sw = f_s_tex.width
    content_labels = m_r.labels.reshape(-1)
    style_labels = m_s.labels.reshape(-1)
    ct, st = f_r_tex.flat(), f_s_tex.flat()
    cs, ss = f_r_sem.flat(), f_s_sem.flat()

    lin = np.zeros(h * w, dtype=np.int64)
    dist = np.zeros(h * w, dtype=np.float64)
    counts: dict[int, int] = {}
    fallback_rows: list[np.ndarray] = []
    for label in np.unique(content_labels):
        rows = np.nonzero(content_labels == label)[0]
        cand = np.nonzero(style_labels == label)[0]
        counts[int(label)] = int(cand.shape[0])
        if cand.shape[0] == 0:
            fallback_rows.append(rows)
            continue
        d = alpha * _distance_matrix(ct[rows], st[cand])
        if alpha != 1.0:
            d = d + (1.0 - alpha) * _distance_matrix(cs[rows], ss[cand])
        best = np.argmin(d, axis=1)
        lin[rows] = cand[best]
        dist[rows] = d[np.arange(rows.shape[0]), best]
    if fallback_rows:
        rows = np.concatenate(fallback_rows)
        log.warning("SANNFM: %d pixels have labels absent from the style mask; "
                    "falling back to unrestricted texture matching", rows.shape[0])
        d = _distance_matrix(ct[rows], st)
        best = np.argmin(d, axis=1)
        lin[rows] = best
        dist[rows] = d[np.arange(rows.shape[0]), best]

    index_map = np.stack([lin // sw, lin % sw], axis=1) \
        .reshape(h, w, 2).astype(np.int32)
    return MatchResult(index_map=index_map, distance_map=dist.reshape(h, w),
                       candidate_counts=counts)
