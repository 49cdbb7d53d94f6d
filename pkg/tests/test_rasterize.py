import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dentexfuse.annotations import AnnotatedObject, ToothId, to_global
from dentexfuse.errors import RangeError
from dentexfuse.geometry import BBox
from dentexfuse.rasterize import (
    OTHER_QUADRANT,
    LabelMask,
    Labeling,
    connected_components,
    crop_mask,
    largest_component_boxes,
    polygon_coverage,
    rasterize_objects,
    read_mask,
    resize_mask,
    write_mask,
)

from .oracles import brute_force_raster, flood_fill_components, flood_fill_largest


def square(i, g, x0, y0, x1, y1):
    t = ToothId(1 + (g - 1) // 8, 1 + (g - 1) % 8)
    ring = ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
    return AnnotatedObject(i, 1, BBox.from_corners(x0, y0, x1, y1), (ring,), t.quadrant, t.in_quadrant)


def test_square_fills_inner_block():
    m = rasterize_objects([square(1, 5, 1, 1, 4, 4)], 6, 6)
    expected = np.zeros((6, 6), dtype=np.uint8)
    expected[1:4, 1:4] = 5
    assert np.array_equal(m.labels, expected)
    assert np.array_equal(m.labels == 5, brute_force_raster([[(1, 1), (4, 1), (4, 4), (1, 4)]], 6, 6))


def test_empty_objects_give_zero_mask():
    m = rasterize_objects([], 7, 3)
    assert m.labels.shape == (3, 7) and not m.labels.any()


def test_later_objects_overwrite():
    m = rasterize_objects([square(1, 3, 0, 0, 4, 4), square(2, 7, 2, 2, 6, 6)], 6, 6)
    assert (m.labels[2:4, 2:4] == 7).all()
    assert m.labels[0, 0] == 3


def test_missing_and_degenerate_polygons_are_counted():
    bare = AnnotatedObject(1, 1, BBox(0, 0, 2, 2), (), 1, 1)
    flat = AnnotatedObject(2, 1, BBox(0, 0, 2, 2), (((0, 0), (2, 0), (2, 0)),), 1, 2)
    no_tooth = AnnotatedObject(3, 1, BBox(0, 0, 2, 2), (((0, 0), (2, 0), (2, 2)),))
    m = rasterize_objects([bare, flat, no_tooth, square(4, 1, 0, 0, 2, 2)], 4, 4)
    assert m.skipped == 3
    assert (m.labels[:2, :2] == 1).all()


def test_hole_via_even_odd():
    outer = ((0, 0), (8, 0), (8, 8), (0, 8))
    inner = ((2, 2), (6, 2), (6, 6), (2, 6))
    cov = polygon_coverage([outer, inner], 8, 8)
    assert not cov[2:6, 2:6].any()
    assert cov.sum() == 64 - 16


def test_quadrant_labeling():
    objs = [square(1, to_global(ToothId(2, 3)), 0, 0, 2, 2), square(2, to_global(ToothId(1, 6)), 3, 0, 5, 2)]
    m = rasterize_objects(objs, 6, 2, Labeling.quadrant_9(2))
    assert m.labels[0, 0] == 3
    assert m.labels[0, 3] == OTHER_QUADRANT
    with pytest.raises(RangeError):
        Labeling.quadrant_9(5)


ring_strategy = st.lists(st.tuples(st.floats(-2, 14), st.floats(-2, 14)), min_size=3, max_size=7)


@settings(max_examples=60, deadline=None)
@given(st.lists(ring_strategy, min_size=1, max_size=2))
def test_coverage_matches_brute_force(rings):
    assert np.array_equal(polygon_coverage(rings, 12, 12), brute_force_raster(rings, 12, 12))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 20), st.integers(0, 20), st.integers(1, 10), st.integers(1, 10))
def test_rectangle_component_bbox_is_vertex_bbox(x, y, w, h):
    m = rasterize_objects([square(1, 9, x, y, x + w, y + h)], 32, 32)
    assert largest_component_boxes(m) == {9: BBox(x, y, w, h)}


def test_two_blobs():
    grid = np.zeros((6, 8), dtype=np.uint8)
    grid[0:2, 0:3] = 5  # size 6
    grid[4, 6:8] = 5  # size 2
    comps = connected_components(LabelMask(grid))
    assert [c.pixel_count for c in comps] == [6, 2]
    assert largest_component_boxes(LabelMask(grid)) == {5: BBox(0, 0, 3, 2)}


def test_diagonal_connectivity():
    grid = np.eye(3, dtype=np.uint8) * 4
    assert len(connected_components(LabelMask(grid), 8)) == 1
    assert len(connected_components(LabelMask(grid), 4)) == 3
    with pytest.raises(RangeError):
        connected_components(LabelMask(grid), 6)


def test_zero_mask_has_no_components():
    assert connected_components(LabelMask.zeros(5, 5)) == []
    assert largest_component_boxes(LabelMask.zeros(5, 5)) == {}


def test_label_nine_is_kept_for_the_caller():
    grid = np.zeros((4, 4), dtype=np.uint8)
    grid[0, 0] = 9
    grid[3, 3] = 2
    assert set(largest_component_boxes(LabelMask(grid))) == {2, 9}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]))
def test_components_match_flood_fill(seed, conn):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 24, size=2)
    grid = rng.integers(0, 4, size=(h, w)).astype(np.uint8)
    got = connected_components(LabelMask(grid), conn)
    ref = flood_fill_components(grid, conn)
    key = lambda c: (c[0], -c[1], c[2][1], c[2][0], c[3])  # noqa: E731
    assert [(c.label, c.pixel_count, tuple(c.bbox.to_list()), c.first_pixel) for c in got] == \
        [(lab, n, tuple(float(v) for v in box), first) for lab, n, box, first in sorted(ref, key=key)]
    for c in got:
        assert c.pixel_count <= c.bbox.area
    assert {k: tuple(v.to_list()) for k, v in largest_component_boxes(LabelMask(grid), conn).items()} == \
        {k: tuple(float(x) for x in v) for k, v in flood_fill_largest(grid, conn).items()}


def test_crop_and_resize():
    grid = np.arange(16, dtype=np.uint8).reshape(4, 4)
    m = LabelMask(grid)
    assert np.array_equal(crop_mask(m, BBox(1, 1, 2, 2)).labels, grid[1:3, 1:3])
    up = resize_mask(LabelMask(grid[:2, :2]), 4, 4)
    assert np.array_equal(up.labels, np.repeat(np.repeat(grid[:2, :2], 2, 0), 2, 1))
    assert set(np.unique(resize_mask(m, 3, 7).labels)) <= set(np.unique(grid))


def test_mask_png_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    m = LabelMask(rng.integers(0, 33, size=(9, 13)).astype(np.uint8))
    path = tmp_path / "m.png"
    write_mask(m, path)
    assert np.array_equal(read_mask(path).labels, m.labels)
    assert list(tmp_path.iterdir()) == [path]
