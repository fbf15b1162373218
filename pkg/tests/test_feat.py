import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxstyle.errors import (
    DimensionError,
    MissingFeatureError,
    NonDifferentiableError,
)
from voxstyle.feat import (
    Extractor,
    FeatureMap,
    FeatureSpace,
    LabelMask,
    backprop_extract,
    downsample_mask,
    extract,
    resample_bilinear,
)


def rand_image(seed, h=9, w=7):
    return np.random.default_rng(seed).uniform(0, 1, (h, w, 3))


# ---------------------------------------------------------------- extract

def test_identity_extractor():
    x = Extractor.rgb_patch(1, 1)
    img = rand_image(0)
    fm = extract(x, img)
    assert fm.channels == 3
    assert np.array_equal(fm.data, img)


def test_conv_bank_deterministic():
    x = Extractor.conv_bank(seed=9)
    img = rand_image(1)
    a = extract(x, img)
    b = extract(x, img)
    assert np.array_equal(a.data, b.data)


def test_patch2_on_constant_image():
    x = Extractor.rgb_patch(2, 2)
    img = np.full((8, 8, 3), 0.5)
    fm = extract(x, img)
    assert fm.data.shape == (4, 4, 3)
    assert np.allclose(fm.data, 0.5)


@pytest.mark.parametrize("h,w,stride", [(9, 7, 2), (8, 8, 2), (5, 5, 3)])
def test_output_dims_are_ceil(h, w, stride):
    x = Extractor.conv_bank(stride=stride)
    fm = extract(x, rand_image(2, h, w))
    assert fm.data.shape[:2] == (-(-h // stride), -(-w // stride))


def test_precomputed_lookup_and_miss():
    fm = FeatureMap(np.ones((2, 2, 5)), FeatureSpace.TEXTURE)
    x = Extractor.precomputed({"img0": fm}, FeatureSpace.TEXTURE)
    assert extract(x, np.zeros((4, 4, 3)), key="img0") is fm
    with pytest.raises(MissingFeatureError):
        extract(x, np.zeros((4, 4, 3)), key="nope")
    with pytest.raises(NonDifferentiableError):
        backprop_extract(x, np.zeros((4, 4, 3)), np.ones((2, 2, 5)))


def test_precomputed_never_differentiable():
    from voxstyle.feat import ExtractorKind
    from voxstyle.errors import DimensionError
    with pytest.raises(DimensionError):
        Extractor(kind=ExtractorKind.PRECOMPUTED, space=FeatureSpace.TEXTURE,
                  differentiable=True)


def test_color_quant_forward_only():
    x = Extractor.color_quant()
    fm = extract(x, rand_image(3))
    assert fm.space is FeatureSpace.SEMANTIC
    assert fm.channels == 8
    assert not x.differentiable


# ------------------------------------------------------------- backprop

def test_backprop_identity():
    x = Extractor.rgb_patch(1, 1)
    img = rand_image(4)
    g = rand_image(5)
    assert np.array_equal(backprop_extract(x, img, g), g)


def test_backprop_zero():
    x = Extractor.conv_bank()
    img = rand_image(6)
    out = backprop_extract(x, img, np.zeros((5, 4, 16)))
    assert not np.any(out)


@pytest.mark.parametrize("factory", [
    lambda: Extractor.rgb_patch(2, 2),
    lambda: Extractor.conv_bank(seed=11),
])
def test_backprop_matches_finite_differences(factory):
    x = factory()
    rng = np.random.default_rng(7)
    img = rng.uniform(0.1, 0.9, (9, 7, 3))
    fdims = extract(x, img).data.shape
    g = rng.normal(size=fdims)
    analytic = backprop_extract(x, img, g)
    eps = 1e-5
    p = rng.normal(size=img.shape)
    lp = float((extract(x, img + eps * p).data * g).sum())
    lm = float((extract(x, img - eps * p).data * g).sum())
    fd = (lp - lm) / (2 * eps)
    an = float((analytic * p).sum())
    assert abs(an - fd) <= 1e-4 * max(abs(fd), 1.0)


@pytest.mark.parametrize("factory", [
    lambda: Extractor.rgb_patch(2, 2),
    lambda: Extractor.conv_bank(seed=13),
])
def test_adjoint_identity(factory):
    # <extract(x), g> == <x, backprop(x, g)>: exact for the linear patch
    # extractor and exact by positive homogeneity for abs-of-conv
    x = factory()
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 1, (10, 6, 3))
    g = rng.normal(size=extract(x, img).data.shape)
    lhs = float((extract(x, img).data * g).sum())
    rhs = float((img * backprop_extract(x, img, g)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_rgb_patch_linearity(a, b, seed):
    x = Extractor.rgb_patch(2, 2)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(6, 6, 3))
    v = rng.normal(size=(6, 6, 3))
    lhs = extract(x, a * u + b * v).data
    rhs = a * extract(x, u).data + b * extract(x, v).data
    assert np.allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.01, 5), seed=st.integers(0, 1000))
def test_conv_bank_positive_homogeneity(a, seed):
    x = Extractor.conv_bank(seed=3)
    img = np.random.default_rng(seed).uniform(0, 1, (7, 7, 3))
    assert np.allclose(extract(x, a * img).data, a * extract(x, img).data,
                       atol=1e-9)


# ------------------------------------------------------------- resampling

def test_resample_constant():
    fm = FeatureMap(np.full((3, 5, 2), 2.0))
    out = resample_bilinear(fm, 7, 11)
    assert np.allclose(out.data, 2.0)


def test_resample_bilinear_oracle_2_to_4():
    # hand-computed align-corners-false weights
    fm = FeatureMap(np.array([[[0.0]], [[1.0]]]))
    out = resample_bilinear(fm, 4, 1)
    assert np.allclose(out.data.reshape(-1), [0.0, 0.25, 0.75, 1.0])


def test_resample_identity():
    fm = FeatureMap(np.random.default_rng(9).normal(size=(5, 4, 3)))
    out = resample_bilinear(fm, 5, 4)
    assert np.array_equal(out.data, fm.data)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), oh=st.integers(1, 12), ow=st.integers(1, 12))
def test_resample_respects_bounds(seed, oh, ow):
    rng = np.random.default_rng(seed)
    fm = FeatureMap(rng.normal(size=(4, 6, 2)))
    out = resample_bilinear(fm, oh, ow)
    for c in range(2):
        assert out.data[..., c].min() >= fm.data[..., c].min() - 1e-12
        assert out.data[..., c].max() <= fm.data[..., c].max() + 1e-12


# ------------------------------------------------------------- mask resize

def test_downsample_mask_uniform():
    mask = LabelMask(np.full((6, 6), 3, dtype=np.int32))
    out = downsample_mask(mask, 2, 2)
    assert np.all(out.labels == 3)


def test_downsample_mask_halves():
    labels = np.zeros((4, 4), dtype=np.int32)
    labels[:, 2:] = 1
    out = downsample_mask(LabelMask(labels), 2, 2)
    assert np.array_equal(out.labels, [[0, 1], [0, 1]])


def test_downsample_mask_identity():
    labels = np.random.default_rng(10).integers(0, 4, (5, 7)).astype(np.int32)
    mask = LabelMask(labels)
    out = downsample_mask(mask, 5, 7)
    assert np.array_equal(out.labels, labels)


def test_label_mask_invariants():
    with pytest.raises(DimensionError):
        LabelMask(np.zeros((3, 3)))          # non-integer dtype
    with pytest.raises(DimensionError):
        LabelMask(np.full((2, 2), -1, dtype=np.int32))
    mask = LabelMask(np.array([[0, 2]], dtype=np.int32))
    assert mask.n_classes == 2
    assert mask.present_labels() == [0, 2]
