"""Neighbor queries and Chamfer distances against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from springfit import geom


def brute_knn(points, query, k):
    d = np.linalg.norm(points - query, axis=1)
    order = np.lexsort((np.arange(len(points)), d))[:k]
    return [(int(i), float(d[i])) for i in order]


def brute_radius(points, query, radius):
    d = np.linalg.norm(points - query, axis=1)
    keep = [(float(d[i]), int(i)) for i in range(len(points)) if d[i] <= radius]
    keep.sort()
    return [(i, dist) for dist, i in keep]


def brute_chamfer(a, b):
    total_a = np.mean([min(np.sum((p - q) ** 2) for q in b) for p in a])
    total_b = np.mean([min(np.sum((p - q) ** 2) for q in a) for p in b])
    return total_a + total_b


def test_knn_simple_cases():
    cloud = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)
    index = geom.NeighborIndex(cloud)
    assert index.knn([0, 0, 0], 2) == [(0, 0.0), (1, 1.0)]


def test_knn_tie_breaks_toward_lower_index():
    cloud = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    index = geom.NeighborIndex(cloud)
    res = index.knn([0.5, 0, 0], 2)
    assert res == [(0, 0.5), (1, 0.5)]


def test_knn_insufficient_points():
    index = geom.NeighborIndex(np.zeros((3, 3)))
    with pytest.raises(ValueError, match="insufficient points"):
        index.knn([0, 0, 0], 4)


def test_radius_simple_and_boundary_inclusive():
    cloud = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    index = geom.NeighborIndex(cloud)
    assert index.radius_neighbors([0, 0, 0], 0.5) == [(0, 0.0)]
    assert index.radius_neighbors([0, 0, 0], 1.0) == [(0, 0.0), (1, 1.0)]


def test_radius_empty_result_allowed():
    index = geom.NeighborIndex(np.zeros((1, 3)))
    assert index.radius_neighbors([10.0, 0, 0], 1.0) == []


@pytest.mark.parametrize("seed", range(10))
def test_knn_matches_brute_force_random(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((200, 3))
    index = geom.NeighborIndex(pts)
    for q in rng.random((10, 3)):
        assert index.knn(q, 5) == brute_knn(pts, q, 5)


@pytest.mark.parametrize("seed", range(10))
def test_radius_matches_brute_force_random(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((200, 3))
    index = geom.NeighborIndex(pts, cell_size=0.1)
    for q in rng.random((10, 3)):
        assert index.radius_neighbors(q, 0.1) == brute_radius(pts, q, 0.1)


def test_grid_cloud_with_exact_ties():
    # Lattice data exercises exact distance ties in both query kinds.
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    index = geom.NeighborIndex(g, cell_size=1.0)
    for q, k in [((1.0, 1.0, 1.0), 7), ((1.5, 1.5, 1.5), 8), ((0.0, 0.0, 0.0), 4)]:
        assert index.knn(q, k) == brute_knn(g, np.asarray(q), k)
        assert index.radius_neighbors(q, 1.0) == brute_radius(g, np.asarray(q), 1.0)


def test_radius_larger_than_diagonal_falls_back():
    rng = np.random.default_rng(4)
    pts = rng.random((50, 3)) * 0.01
    index = geom.NeighborIndex(pts, cell_size=0.002)
    q = np.array([0.005, 0.005, 0.005])
    assert index.radius_neighbors(q, 5.0) == brute_radius(pts, q, 5.0)


def test_chamfer_identity_and_hand_value():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    assert geom.chamfer(a, a) == 0.0
    assert geom.chamfer(a, b) == 2.0


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(7)
    a = rng.random((50, 3))
    b = rng.random((70, 3))
    assert geom.chamfer(a, b) == pytest.approx(brute_chamfer(a, b), rel=1e-12)


def test_chamfer_empty_cloud_rejected():
    with pytest.raises(ValueError):
        geom.chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


def test_chamfer_rejects_nonfinite():
    with pytest.raises(ValueError):
        geom.chamfer(np.array([[np.nan, 0, 0]]), np.zeros((1, 3)))


finite_coord = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, width=64)


@st.composite
def clouds(draw, max_points=12):
    n = draw(st.integers(min_value=1, max_value=max_points))
    vals = draw(
        st.lists(st.tuples(finite_coord, finite_coord, finite_coord), min_size=n, max_size=n)
    )
    return np.asarray(vals, dtype=np.float64)


@given(clouds(), clouds())
@settings(max_examples=60, deadline=None)
def test_chamfer_symmetric(a, b):
    assert geom.chamfer(a, b) == geom.chamfer(b, a)


@given(clouds())
@settings(max_examples=30, deadline=None)
def test_chamfer_zero_iff_equal_sets(a):
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(a))
    assert geom.chamfer(a, a[perm]) == 0.0


def test_chamfer_positive_when_sets_differ():
    a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    b = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert geom.chamfer(a, b) > 0.0


def test_chamfer_translation_covariant_exact_offsets():
    # Offsets that keep every coordinate exactly representable give exact
    # equality; arbitrary offsets are covered at float tolerance below.
    rng = np.random.default_rng(3)
    a = 1.25 + 0.25 * rng.random((40, 3))
    b = 1.25 + 0.25 * rng.random((30, 3))
    for t in (0.25, -0.25, 0.5, 0.125):
        offset = np.full(3, t)
        assert geom.chamfer(a + offset, b + offset) == geom.chamfer(a, b)


@given(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
@settings(max_examples=30, deadline=None)
def test_chamfer_translation_covariant_general(t):
    rng = np.random.default_rng(11)
    a = rng.random((20, 3))
    b = rng.random((25, 3))
    offset = np.full(3, t)
    assert geom.chamfer(a + offset, b + offset) == pytest.approx(geom.chamfer(a, b), abs=1e-12)


def test_nearest_indices_tie_break():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    q = np.array([[0.5, 0, 0]])
    assert geom.nearest_indices(pts, q)[0] == 0
