import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glandseg.core import BoundingBox, ValidationError
from glandseg.labelgen import (
    derive_all,
    derive_boxes,
    derive_edge_mask,
    dilate_mask,
    disk,
    fill_boxes,
    instance_separated_mask,
)

import oracles

instance_maps = arrays(np.int64, st.tuples(st.integers(1, 10), st.integers(1, 10)),
                       elements=st.integers(0, 5))
masks = arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(0, 1))


def test_constant_map_has_no_edges():
    assert not derive_edge_mask(np.ones((5, 6), dtype=int)).any()


def test_two_column_blocks():
    z = np.array([[1, 1, 2, 2]] * 4)
    e = derive_edge_mask(z)
    assert np.array_equal(e, np.array([[0, 1, 1, 0]] * 4, dtype=np.uint8))


def test_single_pixel_and_its_four_neighbours():
    z = np.zeros((5, 5), dtype=int)
    z[2, 2] = 1
    expected = np.zeros((5, 5), dtype=np.uint8)
    expected[2, 2] = expected[1, 2] = expected[3, 2] = expected[2, 1] = expected[2, 3] = 1
    assert np.array_equal(derive_edge_mask(z), expected)


def test_constant_border_marks_the_frame():
    e = derive_edge_mask(np.ones((4, 4), dtype=int), border="constant")
    assert e[0].all() and e[:, 0].all() and not e[1:3, 1:3].any()


@settings(max_examples=80, deadline=None)
@given(instance_maps)
def test_edge_mask_matches_scan_oracle(z):
    assert np.array_equal(derive_edge_mask(z), oracles.edge_mask(z.tolist()))


@settings(max_examples=80, deadline=None)
@given(instance_maps, st.permutations(range(1, 6)))
def test_edge_mask_id_permutation_invariant(z, perm):
    lut = np.array([0, *perm])
    assert np.array_equal(derive_edge_mask(z), derive_edge_mask(lut[z]))


def test_instance_separated_mask_cuts_contacts():
    z = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [0, 0, 0, 0]])
    y = instance_separated_mask(z)
    assert np.array_equal(y, np.array([[1, 0, 0, 1], [1, 0, 0, 1], [0, 0, 0, 0]], dtype=np.uint8))


def test_disk_radius_one_is_plus():
    assert np.array_equal(disk(1), np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool))


def test_dilate_single_pixel_radius_one():
    e = np.zeros((5, 5), dtype=np.uint8)
    e[2, 2] = 1
    d = dilate_mask(e, 1)
    assert d.sum() == 5 and d[1, 2] and d[3, 2] and d[2, 1] and d[2, 3]


@settings(max_examples=50, deadline=None)
@given(masks, st.integers(0, 4))
def test_dilate_matches_distance_oracle(e, r):
    assert np.array_equal(dilate_mask(e, r), oracles.dilate(e.tolist(), r))


@settings(max_examples=50, deadline=None)
@given(masks, st.integers(0, 3), st.integers(0, 3))
def test_dilate_monotone_and_composition(e, r1, r2):
    d1 = dilate_mask(e, r1)
    assert np.all(d1 >= e)
    assert np.all(dilate_mask(d1, r2) >= dilate_mask(e, max(r1, r2)))
    assert np.array_equal(dilate_mask(e, 0), e)


def test_dilate_saturated_and_invalid():
    assert dilate_mask(np.ones((4, 4), dtype=np.uint8), 3).all()
    with pytest.raises(ValidationError):
        dilate_mask(np.zeros((2, 2), dtype=np.uint8), -1)


def test_boxes_examples():
    assert derive_boxes(np.zeros((3, 3), dtype=int)) == []
    z = np.zeros((4, 5), dtype=int)
    z[1:3, 1:4] = 7
    assert derive_boxes(z) == [BoundingBox(7, 1, 3, 1, 2)]
    z = np.zeros((3, 3), dtype=int)
    z[0, 0] = 1
    assert derive_boxes(z) == [BoundingBox(1, 0, 0, 0, 0)]


@settings(max_examples=80, deadline=None)
@given(instance_maps)
def test_boxes_are_tight(z):
    boxes = derive_boxes(z)
    assert [b.id for b in boxes] == sorted(set(z[z > 0].tolist()))
    for b in boxes:
        ys, xs = np.nonzero(z == b.id)
        assert (b.y_min, b.y_max, b.x_min, b.x_max) == (ys.min(), ys.max(), xs.min(), xs.max())


def test_fill_boxes_examples():
    assert not fill_boxes([], 4, 4).any()
    boxes = [BoundingBox(1, 0, 2, 0, 2), BoundingBox(2, 2, 4, 2, 4)]
    c = fill_boxes(boxes, 5, 5)
    assert c[2, 2] == 2 and c.sum() == 18
    three = [BoundingBox(i, 0, 2, 0, 2) for i in (1, 2, 3)]
    assert fill_boxes(three, 3, 3)[1, 1] == 3


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 7), st.integers(0, 7)),
                max_size=6))
def test_fill_boxes_membership_oracle(raw):
    boxes = [BoundingBox(i + 1, min(a, b), max(a, b), min(c, d), max(c, d)) for i, (a, b, c, d) in enumerate(raw)]
    got = fill_boxes(boxes, 8, 10)
    want = np.zeros((8, 10), dtype=np.int64)
    for b in boxes:
        for y in range(b.y_min, b.y_max + 1):
            for x in range(b.x_min, b.x_max + 1):
                want[y, x] += 1
    assert np.array_equal(got, want)
    assert got.sum() == sum(b.area for b in boxes)


def test_fill_boxes_rejects_out_of_bounds():
    with pytest.raises(ValidationError):
        fill_boxes([BoundingBox(1, 0, 5, 0, 0)], 3, 3)


def test_derive_all_uses_dilated_edges():
    z = np.zeros((9, 9), dtype=int)
    z[4, 4] = 1
    edges, boxes, counts = derive_all(z, edge_radius=1)
    assert np.array_equal(edges, dilate_mask(derive_edge_mask(z), 1))
    assert boxes == [BoundingBox(1, 4, 4, 4, 4)] and counts.sum() == 1
