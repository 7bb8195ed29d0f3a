import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glandseg.augment import (
    AugmentConfig,
    augment_sample,
    check_radial_k1,
    elastic_radial,
    radial_source_coords,
    random_crop,
    rot_flip,
    zero_mean,
)
from glandseg.core import ValidationError
from glandseg.labelgen import derive_edge_mask
from glandseg.synth import SynthConfig, generate


def test_zero_mean_examples():
    const = [np.full((3, 4, 3), 7.0), np.full((2, 2, 3), 7.0)]
    assert all(not o.any() for o in zero_mean(const))
    a, b = np.full((2, 2, 1), 10.0), np.full((2, 2, 1), 30.0)
    oa, ob = zero_mean([a, b])
    assert np.all(oa == -10) and np.all(ob == 10)
    assert np.allclose(oa - a, -20) and np.allclose(ob - b, -20)


def test_zero_mean_pooled_and_per_image(rng):
    imgs = [rng.random((5, 6, 3)) for _ in range(3)]
    pooled = np.concatenate([o.reshape(-1, 3) for o in zero_mean(imgs)])
    assert np.allclose(pooled.mean(axis=0), 0, atol=1e-12)
    for o in zero_mean(imgs, per_image=True):
        assert np.allclose(o.mean(axis=(0, 1)), 0, atol=1e-12)


def _pair(rng, h=13, w=9):
    return rng.random((h, w, 3)), [rng.integers(0, 5, (h, w))]


def test_rot_flip_group_laws(rng):
    img, labs = _pair(rng)
    i0, l0 = rot_flip(img, labs, 0, False)
    assert np.array_equal(i0, img) and np.array_equal(l0[0], labs[0])
    a, la = img, labs
    for _ in range(4):
        a, la = rot_flip(a, la, 1, False)
    assert np.array_equal(a, img) and np.array_equal(la[0], labs[0])
    b, lb = rot_flip(*rot_flip(img, labs, 0, True), 0, True)
    assert np.array_equal(b, img) and np.array_equal(lb[0], labs[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.booleans(), st.integers(0, 2**31))
def test_rot_flip_commutes_with_edges(q, f, seed):
    z = np.random.default_rng(seed).integers(0, 4, (7, 10))
    _, (zr,) = rot_flip(np.zeros(z.shape), [z], q, f)
    _, (er,) = rot_flip(np.zeros(z.shape), [derive_edge_mask(z)], q, f)
    assert np.array_equal(derive_edge_mask(zr), er)


def test_elastic_identity_and_fixed_centre(rng):
    img, labs = _pair(rng, 11, 11)
    out, lo = elastic_radial(img, labs, 0.0)
    assert np.array_equal(out, img) and np.array_equal(lo[0], labs[0])
    sy, sx = radial_source_coords((11, 11), 0.12)
    assert (sy[5, 5], sx[5, 5]) == (5.0, 5.0)
    out, lo = elastic_radial(img, labs, -0.1)
    assert np.allclose(out[5, 5], img[5, 5]) and lo[0][5, 5] == labs[0][5, 5]


def test_corner_source_radius():
    h, w = 21, 31
    sy, sx = radial_source_coords((h, w), 0.1)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    r = np.hypot(cy, cx)
    assert np.hypot(sy[0, 0] - cy, sx[0, 0] - cx) == pytest.approx(r * 1.1, rel=1e-12)
    # Same ray: the source stays on the line through the centre.
    assert (sy[0, 0] - cy) / (sx[0, 0] - cx) == pytest.approx(cy / cx, rel=1e-12)


def test_radial_rejects_folding_coefficients():
    with pytest.raises(ValidationError):
        check_radial_k1(-0.5)
    check_radial_k1(-0.3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.15, 0.15), st.integers(0, 2**31))
def test_warped_labels_are_subset_and_partition(k1, seed):
    z = np.random.default_rng(seed).choice([0, 3, 8, 11], size=(16, 12))
    _, (zw,) = elastic_radial(np.zeros((16, 12)), [z], k1)
    assert set(np.unique(zw)) <= set(np.unique(z)) | {0}
    assert zw.dtype == z.dtype and zw.shape == z.shape


def test_random_crop_examples():
    img = np.zeros((522, 775, 3))
    z = np.zeros((522, 775), dtype=np.int64)
    a, (b,) = random_crop(img, [z], 400, np.random.default_rng(0))
    assert a.shape == (400, 400, 3) and b.shape == (400, 400)
    small = np.arange(24.0).reshape(4, 6, 1)
    full, _ = random_crop(small[:4, :4], [np.zeros((4, 4), int)], 4, np.random.default_rng(1))
    assert np.array_equal(full, small[:4, :4])
    r1 = random_crop(img, [z], 400, np.random.default_rng(5))
    r2 = random_crop(img + np.arange(775)[None, :, None], [z], 400, np.random.default_rng(5))
    r3 = random_crop(img + np.arange(775)[None, :, None], [z], 400, np.random.default_rng(5))
    assert np.array_equal(r2[0], r3[0]) and r1[0].shape == r2[0].shape
    with pytest.raises(ValidationError):
        random_crop(img, [z], 600, np.random.default_rng(0))


def test_augment_strategies_and_partition():
    img, z = generate(SynthConfig(image_size=48, seed=4))
    v1 = augment_sample(img, [z], AugmentConfig("I", 32), np.random.default_rng(0))
    v2 = augment_sample(img, [z], AugmentConfig("II", 32), np.random.default_rng(0))
    assert len(v1) == 8 and len(v2) == 16
    assert {(v["quarter_turns"], v["hflip"]) for v in v1} == {(q, f) for q in range(4) for f in (0, 1)}
    for v in v2:
        lab = v["labels"][0]
        assert v["image"].shape[:2] == lab.shape == (32, 32)
        assert set(np.unique(lab)) <= set(np.unique(z))
        assert -0.15 <= v["k1"] <= 0.15
