from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from velomotion.errors import DegenerateSet, NotMinimal, OutsideHull
from velomotion.geometry import (
    ProjectionMap,
    RegionKind,
    VelocitySet,
    barycentric,
    build_projection,
    classify_point,
    in_relative_interior,
    lift_point,
    minimal_support_weights,
    state_space_dim,
)


def test_canonical_set_is_minimal():
    vs = VelocitySet.canonical(3)
    assert vs.D == 3 and vs.size == 4 and vs.M == 3
    assert vs.is_minimal and vs.is_canonical
    assert state_space_dim(vs) == 3


def test_rows_are_velocities():
    vs = VelocitySet.from_rows([[0, 1], [1, 0], [-1, 0]])
    np.testing.assert_array_equal(vs.V[:, 2], [-1, 0])
    assert vs.D == 2 and vs.size == 3


def test_duplicate_velocities_rejected():
    with pytest.raises(DegenerateSet):
        VelocitySet.from_rows([[0.0], [1.0], [1.0]])


def test_non_finite_rejected():
    with pytest.raises(DegenerateSet):
        VelocitySet.from_rows([[0.0], [np.inf]])


def test_collinear_planar_set_projects_to_first_coordinate():
    vs = VelocitySet.from_rows([[0, 0], [1, 1], [2, 2]])
    assert state_space_dim(vs) == 1
    pm = build_projection(vs)
    assert pm.rows == (0,)
    assert pm.target_dim == 1
    np.testing.assert_array_equal(pm.project_velocities(vs).V, [[0, 1, 2]])


def test_full_dimensional_set_projects_by_identity():
    vs = VelocitySet.from_rows([[0, 1], [1, 0], [-1, 0]])
    pm = build_projection(vs)
    assert pm.is_identity and pm.rows == (0, 1)


def test_vertical_segment_uses_second_coordinate():
    vs = VelocitySet.from_rows([[3, 0], [3, 1], [3, 2]])
    assert build_projection(vs).rows == (1,)


def test_point_hull_cannot_be_projected():
    with pytest.raises(DegenerateSet):
        build_projection(VelocitySet.from_rows([[1.0, 1.0]]))


def test_lift_point_prefers_smallest_support():
    vs = VelocitySet.from_rows([[0, 0], [1, 1], [2, 2]])
    pm = build_projection(vs)
    np.testing.assert_allclose(lift_point(pm, vs, [1.0], 1.0), [1.0, 1.0])
    np.testing.assert_allclose(minimal_support_weights(vs.V, [1.0, 1.0]), [0, 1, 0])


def test_lift_point_outside():
    vs = VelocitySet.from_rows([[0, 0], [1, 1], [2, 2]])
    pm = build_projection(vs)
    with pytest.raises(OutsideHull):
        lift_point(pm, vs, [2.5], 1.0)


def test_barycentric_requires_minimal():
    with pytest.raises(NotMinimal):
        barycentric(VelocitySet.from_rows([[0.0], [1.0], [-1.0]]), [0.0])


@pytest.mark.parametrize("x,kind,face", [
    ([0.0, 0.0], RegionKind.VERTEX, (0,)),
    ([1.0, 0.0], RegionKind.VERTEX, (1,)),
    ([0.5, 0.0], RegionKind.FACE, (0, 1)),
    ([0.5, 0.5], RegionKind.FACE, (1, 2)),
    ([0.2, 0.3], RegionKind.INNER, (0, 1, 2)),
    ([0.8, 0.8], RegionKind.OUTSIDE, ()),
    ([-0.1, 0.2], RegionKind.OUTSIDE, ()),
])
def test_classify_canonical_triangle(x, kind, face):
    rc = classify_point(VelocitySet.canonical(2), x, 1.0)
    assert rc.kind == kind
    assert rc.face == face


def test_classify_ambiguous_boundary():
    rc = classify_point(VelocitySet.canonical(2), [0.5, 1e-11], 1.0)
    assert rc.kind == RegionKind.BOUNDARY


def test_classify_at_time_zero():
    vs = VelocitySet.canonical(2)
    assert classify_point(vs, [0, 0], 0.0).kind == RegionKind.VERTEX
    assert classify_point(vs, [0.1, 0], 0.0).kind == RegionKind.OUTSIDE


def test_classify_non_minimal_line():
    vs = VelocitySet.from_rows([[0.0], [1.0], [-1.0]])
    assert classify_point(vs, [0.3], 1.0).kind == RegionKind.INNER
    assert classify_point(vs, [1.0], 1.0).kind == RegionKind.VERTEX
    assert classify_point(vs, [1.2], 1.0).kind == RegionKind.OUTSIDE


def test_relative_interior_of_subsets():
    vs = VelocitySet.from_rows([[0.0], [1.0], [-1.0]])
    assert in_relative_interior(vs, [0.3], 1.0, (0, 1))
    assert not in_relative_interior(vs, [0.3], 1.0, (0, 2))
    assert in_relative_interior(vs, [0.3], 1.0, (1, 2))
    assert in_relative_interior(vs, [0.3], 1.0, (0, 1, 2))
    assert not in_relative_interior(vs, [0.0], 1.0, (0, 1))


def test_projection_map_matrix():
    pm = ProjectionMap(3, 2, (0, 2))
    np.testing.assert_array_equal(pm.matrix, [[1, 0, 0], [0, 0, 1]])
    np.testing.assert_array_equal(pm.apply([[1, 2, 3]]), [[1, 3]])


weights = st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3)


@settings(max_examples=60, deadline=None)
@given(weights, st.floats(0.1, 5.0))
def test_barycentric_round_trip(w, t):
    vs = VelocitySet.from_rows([[0.0, 0.0], [1.0, 0.2], [-0.3, 1.0]])
    w = np.asarray(w) / np.sum(w)
    x = vs.V @ w * t
    np.testing.assert_allclose(barycentric(vs, x, t), w, atol=1e-12)
    rc = classify_point(vs, x, t)
    assert rc.kind == RegionKind.INNER


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.1, 3.0))
def test_lift_projection_round_trip(s, t):
    vs = VelocitySet.from_rows([[0, 0, 0], [1, 2, -1], [2, 4, -2]])
    pm = build_projection(vs)
    x = vs.V @ np.array([1 - s, 0.0, s]) * t
    np.testing.assert_allclose(pm.apply(lift_point(pm, vs, pm.apply(x), t)), pm.apply(x), atol=1e-12)
