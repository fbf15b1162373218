import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxstyle.errors import DegenerateVectorError, DimensionError
from voxstyle.feat import FeatureMap
from voxstyle.maskgen import (
    LabelEmbeddingSet,
    mask_from_embeddings,
    mask_from_pixel_query,
)


def two_region_map(h=6, w=8):
    """Left region has features along e0, right along e1 (orthogonal)."""
    data = np.zeros((h, w, 4))
    data[:, : w // 2, 0] = 1.0
    data[:, w // 2:, 1] = 1.0
    return FeatureMap(data)


def brute_mask(sem, protos):
    from voxstyle.match import ZERO_NORM_DISTANCE
    h, w = sem.height, sem.width
    out = np.zeros((h, w), dtype=np.int32)
    for y in range(h):
        for x in range(w):
            v = sem.data[y, x]
            best, arg = np.inf, 0
            for i, p in enumerate(protos):
                nv, npv = np.linalg.norm(v), np.linalg.norm(p)
                d = ZERO_NORM_DISTANCE if nv == 0 or npv == 0 \
                    else 1.0 - float(v @ p) / (nv * npv)
                if d < best:
                    best, arg = d, i
            out[y, x] = arg
    return out


# ------------------------------------------------------------- pixel query

def test_pixel_query_orthogonal_regions():
    sem = two_region_map()
    mask = mask_from_pixel_query(sem, [(0, 0, 0), (7, 0, 1)])
    assert np.all(mask.labels[:, :4] == 0)
    assert np.all(mask.labels[:, 4:] == 1)


def test_pixel_query_single_on_constant_map():
    sem = FeatureMap(np.full((4, 4, 3), 0.5))
    mask = mask_from_pixel_query(sem, [(1, 2, 1)], tau=0.3)
    assert np.all(mask.labels == 1)


def test_pixel_query_noisy_two_cluster_oracle():
    rng = np.random.default_rng(0)
    base = two_region_map()
    noisy = FeatureMap(base.data + rng.normal(0, 0.2, base.data.shape))
    queries = [(1, 1, 0), (6, 4, 1)]
    mask = mask_from_pixel_query(noisy, queries)
    protos = [noisy.data[1, 1], noisy.data[4, 6]]
    assert np.array_equal(mask.labels, brute_mask(noisy, protos))


def test_pixel_query_out_of_bounds():
    with pytest.raises(DimensionError):
        mask_from_pixel_query(two_region_map(), [(99, 0, 0)])


def test_pixel_query_zero_feature_rejected():
    sem = FeatureMap(np.zeros((3, 3, 2)))
    with pytest.raises(DegenerateVectorError):
        mask_from_pixel_query(sem, [(0, 0, 0)])


def test_pixel_query_requires_queries():
    with pytest.raises(DimensionError):
        mask_from_pixel_query(two_region_map(), [])


# ------------------------------------------------------------- embeddings

def region_embeddings():
    return LabelEmbeddingSet(ids=[0, 1], names=["left", "right"],
                             vectors=np.eye(4)[:2])


def test_embeddings_exact_regions():
    mask = mask_from_embeddings(two_region_map(), region_embeddings())
    assert np.all(mask.labels[:, :4] == 0)
    assert np.all(mask.labels[:, 4:] == 1)


def test_embeddings_single_label():
    emb = LabelEmbeddingSet(ids=[0], names=["only"], vectors=np.ones((1, 4)))
    mask = mask_from_embeddings(two_region_map(), emb)
    assert np.all(mask.labels == 0)


def test_embeddings_match_brute_force():
    rng = np.random.default_rng(1)
    sem = FeatureMap(rng.normal(size=(5, 7, 6)))
    vectors = rng.normal(size=(3, 6))
    emb = LabelEmbeddingSet(ids=[0, 1, 2], names=list("abc"), vectors=vectors)
    mask = mask_from_embeddings(sem, emb)
    assert np.array_equal(mask.labels, brute_mask(sem, list(vectors)))


def test_embeddings_dimension_mismatch():
    emb = LabelEmbeddingSet(ids=[0], names=["x"], vectors=np.ones((1, 5)))
    with pytest.raises(DimensionError):
        mask_from_embeddings(two_region_map(), emb)


def test_embeddings_zero_norm_rejected():
    with pytest.raises(DegenerateVectorError):
        LabelEmbeddingSet(ids=[0], names=["x"], vectors=np.zeros((1, 4)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 5000), scale=st.floats(0.01, 40.0))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    sem = FeatureMap(rng.normal(size=(4, 5, 3)))
    vectors = rng.normal(size=(3, 3))
    base = mask_from_embeddings(
        sem, LabelEmbeddingSet(ids=[0, 1, 2], names=list("abc"), vectors=vectors))
    vectors2 = vectors.copy()
    vectors2[1] *= scale
    scaled = mask_from_embeddings(
        sem, LabelEmbeddingSet(ids=[0, 1, 2], names=list("abc"), vectors=vectors2))
    assert np.array_equal(base.labels, scaled.labels)


def test_permuting_embeddings_relabels():
    rng = np.random.default_rng(2)
    sem = FeatureMap(rng.normal(size=(4, 5, 3)))
    vectors = rng.normal(size=(3, 3))
    a = mask_from_embeddings(
        sem, LabelEmbeddingSet(ids=[0, 1, 2], names=list("abc"), vectors=vectors))
    b = mask_from_embeddings(
        sem, LabelEmbeddingSet(ids=[2, 0, 1], names=list("cab"), vectors=vectors))
    mapping = {0: 2, 1: 0, 2: 1}
    remapped = np.vectorize(mapping.get)(a.labels)
    assert np.array_equal(remapped, b.labels)
