"""Polygon arithmetic: fixed examples, invariants, shapely cross-checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Point as ShapelyPoint, Polygon as ShapelyPolygon

from hypercurate.errors import DegenerateGeometryError, ValidationError
from hypercurate.geometry import (
    BoundingBox,
    Point2,
    bbox,
    contains_box,
    contains_point,
    convex_polygon,
    horizontal_slice,
    intersect_convex,
    polygon_area,
    polygon_from_wkt,
    polygon_to_wkt,
    translate,
)
from synthgen import random_convex, rect, rotated_square, square

UNIT = square(0, 0, 1)
TRIANGLE = convex_polygon([(0, 0), (2, 0), (0, 2)])


def test_area_unit_square():
    assert polygon_area(UNIT) == 1.0


def test_area_window_rectangle():
    # one 128-px window at 30 m per pixel
    assert polygon_area(square(0, 0, 3840)) == 14_745_600.0


def test_area_triangle():
    assert polygon_area(TRIANGLE) == 2.0


def test_degenerate_polygon_rejected():
    with pytest.raises(DegenerateGeometryError):
        convex_polygon([(0, 0), (1, 0), (2, 0)])
    with pytest.raises((DegenerateGeometryError, ValidationError)):
        convex_polygon([(0, 0), (1e-12, 0), (0, 1e-12)])


def test_non_convex_rejected():
    with pytest.raises(ValidationError):
        convex_polygon([(0, 0), (2, 0), (1, 0.5), (2, 2), (0, 2)])


def test_clockwise_input_is_reoriented():
    cw = convex_polygon([(0, 0), (0, 1), (1, 1), (1, 0)])
    assert polygon_area(cw) == 1.0
    assert set(cw.vertices) == set(UNIT.vertices)


def test_closing_vertex_dropped():
    closed = convex_polygon([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)])
    assert len(closed.vertices) == 4


def test_collinear_vertices_merged():
    p = convex_polygon([(0, 0), (0.5, 0), (1, 0), (1, 1), (0, 1)])
    assert len(p.vertices) == 4
    assert polygon_area(p) == 1.0


def test_intersection_idempotent():
    out = intersect_convex(UNIT, UNIT)
    assert out is not None
    assert abs(polygon_area(out) - 1.0) <= 1e-9


def test_intersection_offset_squares():
    out = intersect_convex(UNIT, square(0.5, 0.5, 1))
    assert out is not None
    assert abs(polygon_area(out) - 0.25) <= 1e-12


def test_intersection_disjoint():
    assert intersect_convex(UNIT, square(5, 5, 1)) is None


def test_intersection_min_area_cutoff():
    # a 0.25 m^2 overlap survives the exact default but not a 1 m^2 floor
    other = square(0.5, 0.5, 1)
    assert intersect_convex(UNIT, other) is not None
    assert intersect_convex(UNIT, other, min_area=1.0) is None


def test_bbox_examples():
    assert bbox(UNIT) == BoundingBox(0, 0, 1, 1)
    assert bbox(TRIANGLE) == BoundingBox(0, 0, 2, 2)
    assert bbox(rotated_square(0, 0, 1)) == BoundingBox(-1, -1, 1, 1)


def test_bounding_box_validation():
    with pytest.raises(ValidationError):
        BoundingBox(1, 0, 0, 1)


def test_contains_point_boundary_closed():
    assert contains_point(UNIT, 0.5, 0.5)
    assert contains_point(UNIT, 0.0, 0.5)
    assert contains_point(UNIT, 1.0, 1.0)
    assert not contains_point(UNIT, 1.001, 0.5)


def test_contains_box_window_conventions():
    big = square(0, 0, 10)
    assert contains_box(big, BoundingBox(2, 2, 5, 5))
    # sharing an edge with the boundary is closed containment
    assert contains_box(big, BoundingBox(0, 0, 3, 3))
    # one corner 1 m outside
    assert not contains_box(big, BoundingBox(8, 8, 11, 11))


def test_horizontal_slice():
    assert horizontal_slice(UNIT, 0.5) == (0.0, 1.0)
    lo, hi = horizontal_slice(TRIANGLE, 1.0)
    assert abs(lo - 0.0) <= 1e-12 and abs(hi - 1.0) <= 1e-12
    assert horizontal_slice(UNIT, 2.0) is None


def test_translate():
    moved = translate(UNIT, 3.0, -2.0)
    assert bbox(moved) == BoundingBox(3, -2, 4, -1)
    assert polygon_area(moved) == 1.0


def test_wkt_round_trip():
    for poly in (UNIT, TRIANGLE, rotated_square(5, 5, 2), rect(-3, 7, 4, 2)):
        again = polygon_from_wkt(polygon_to_wkt(poly))
        assert again == poly


def test_wkt_rejects_garbage():
    with pytest.raises(ValidationError):
        polygon_from_wkt("LINESTRING (0 0, 1 1)")
    with pytest.raises(ValidationError):
        polygon_from_wkt("POLYGON ((0 0, 1 1))")
    # bow-tie ring: not convex
    with pytest.raises(ValidationError):
        polygon_from_wkt("POLYGON ((0 0, 1 1, 1 0, 0 1, 0 0))")


def _poly_pairs():
    return st.builds(
        lambda seed: _pair_from_seed(seed), st.integers(min_value=0, max_value=10**9)
    )


def _pair_from_seed(seed):
    rng = np.random.default_rng(seed)
    a = random_convex(rng, rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(2, 8))
    b = random_convex(rng, rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(2, 8))
    return a, b


@settings(max_examples=200, deadline=None)
@given(_poly_pairs())
def test_intersection_area_bounded(pair):
    a, b = pair
    out = intersect_convex(a, b)
    if out is not None:
        assert polygon_area(out) <= min(polygon_area(a), polygon_area(b)) + 1e-9


@settings(max_examples=200, deadline=None)
@given(_poly_pairs())
def test_intersection_commutative(pair):
    a, b = pair
    ab = intersect_convex(a, b)
    ba = intersect_convex(b, a)
    if ab is None or ba is None:
        assert ab is None and ba is None
        return
    assert _same_ring(ab.vertices, ba.vertices, tol=1e-9)


def _same_ring(va, vb, tol):
    if len(va) != len(vb):
        return False
    n = len(va)
    for shift in range(n):
        if all(
            math.hypot(va[(i + shift) % n].x - vb[i].x, va[(i + shift) % n].y - vb[i].y) <= tol
            for i in range(n)
        ):
            return True
    return False


@settings(max_examples=200, deadline=None)
@given(_poly_pairs())
def test_intersection_bbox_contained(pair):
    a, b = pair
    out = intersect_convex(a, b)
    if out is None:
        return
    ba, bb, bo = bbox(a), bbox(b), bbox(out)
    assert bo.min_x >= max(ba.min_x, bb.min_x) - 1e-9
    assert bo.min_y >= max(ba.min_y, bb.min_y) - 1e-9
    assert bo.max_x <= min(ba.max_x, bb.max_x) + 1e-9
    assert bo.max_y <= min(ba.max_y, bb.max_y) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_intersection_membership_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    a, b = _pair_from_seed(seed)
    out = intersect_convex(a, b)
    shell_a = ShapelyPolygon([(v.x, v.y) for v in a.vertices])
    shell_b = ShapelyPolygon([(v.x, v.y) for v in b.vertices])
    edge_band = shell_a.boundary.buffer(1e-6).union(shell_b.boundary.buffer(1e-6))
    if out is not None:
        edge_band = edge_band.union(
            ShapelyPolygon([(v.x, v.y) for v in out.vertices]).boundary.buffer(1e-6)
        )
    for _ in range(50):
        x, y = rng.uniform(-14, 14), rng.uniform(-14, 14)
        if edge_band.intersects(ShapelyPoint(x, y)):
            continue
        in_both = contains_point(a, x, y) and contains_point(b, x, y)
        in_out = out is not None and contains_point(out, x, y)
        assert in_both == in_out


@settings(max_examples=200, deadline=None)
@given(_poly_pairs())
def test_intersection_matches_shapely(pair):
    a, b = pair
    out = intersect_convex(a, b)
    geos = ShapelyPolygon([(v.x, v.y) for v in a.vertices]).intersection(
        ShapelyPolygon([(v.x, v.y) for v in b.vertices])
    )
    if out is None:
        assert geos.area <= 1e-7
    else:
        ours = polygon_area(out)
        assert abs(ours - geos.area) <= 1e-6 * max(1.0, geos.area)
