import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protoflow.errors import ConfigError, DataError
from protoflow.latent_space import ClassPool
from protoflow.prototypes import (PrototypeSet, assign_prototypes, build_prototypes,
                                  closest_members, kmeans_objective, kmeans_pp_init, lloyd_refine)

SIX = np.array([[0, 0], [0, 1], [1, 0], [10, 10], [10, 11], [11, 10]], dtype=float)


def brute_force_k2(points):
    """Optimal 2-means objective by enumerating every 2-partition."""
    n = len(points)
    best = np.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + mask)
        if labels.all() or not labels.any():
            continue
        cost = sum(((points[labels == j] - points[labels == j].mean(axis=0)) ** 2).sum()
                   for j in (0, 1))
        best = min(best, cost)
    return best


def rowset(a):
    return sorted(map(tuple, np.round(a, 12)))


# -- k-means++ -----------------------------------------------------------------

def test_exhaustion_returns_point_set():
    pts = np.random.default_rng(3).standard_normal((6, 2))
    assert rowset(kmeans_pp_init(pts, 6, seed=1)) == rowset(pts)


def test_d2_weights_force_far_point():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0]])
    for seed in range(40):
        c = kmeans_pp_init(pts, 2, seed)
        if np.array_equal(c[0], [0, 0]):
            np.testing.assert_array_equal(c[1], [10, 0])


def test_single_center_is_deterministic():
    pts = np.random.default_rng(0).standard_normal((20, 3))
    a, b = kmeans_pp_init(pts, 1, 7), kmeans_pp_init(pts, 1, 7)
    np.testing.assert_array_equal(a, b)
    assert any(np.array_equal(a[0], p) for p in pts)


def test_more_centers_than_distinct_points():
    pts = np.array([[1.0, 1.0], [1.0, 1.0]])
    c = kmeans_pp_init(pts, 4, 0)
    assert c.shape == (4, 2)
    assert np.all(c == 1.0)


@pytest.mark.parametrize("K", [0, -2])
def test_nonpositive_k(K):
    with pytest.raises(ConfigError):
        kmeans_pp_init(SIX, K, 0)


def test_empty_points():
    with pytest.raises(DataError):
        kmeans_pp_init(np.empty((0, 2)), 1, 0)


# -- Lloyd ---------------------------------------------------------------------

def test_fixed_point():
    centers = np.array([[1 / 3, 1 / 3], [31 / 3, 31 / 3]])
    out = lloyd_refine(SIX, centers)
    np.testing.assert_allclose(out, centers, atol=1e-12)


def test_two_cluster_optimum():
    out = lloyd_refine(SIX, kmeans_pp_init(SIX, 2, 0))
    assert rowset(np.round(out, 6)) == rowset(np.round([[1 / 3, 1 / 3], [31 / 3, 31 / 3]], 6))
    assert kmeans_objective(SIX, out) == pytest.approx(brute_force_k2(SIX), abs=1e-9)


def test_k_equals_n():
    pts = np.random.default_rng(1).standard_normal((5, 2))
    out = lloyd_refine(pts, kmeans_pp_init(pts, 5, 0))
    assert rowset(out) == rowset(pts)
    assert kmeans_objective(pts, out) == 0.0


def test_empty_cluster_reseeded_to_farthest():
    pts = np.array([[0.0], [1.0], [10.0]])
    centers = np.array([[0.5], [100.0]])
    out, hist = lloyd_refine(pts, centers, max_iter=1, return_history=True)
    # the far center attracts nothing and jumps to the worst-served point
    np.testing.assert_array_equal(out, [[11 / 3], [10.0]])
    assert hist[1] <= hist[0]


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 25), st.integers(1, 3)),
              elements=st.floats(-50, 50, allow_nan=False)),
       st.integers(1, 5), st.integers(0, 1000))
def test_objective_never_increases(points, K, seed):
    _, hist = lloyd_refine(points, kmeans_pp_init(points, K, seed), return_history=True)
    assert all(b <= a * (1 + 1e-12) + 1e-9 for a, b in zip(hist, hist[1:]))


def test_plus_plus_beats_uniform_on_average():
    def final(init):
        return kmeans_objective(SIX, lloyd_refine(SIX, init))
    pp = [final(kmeans_pp_init(SIX, 2, s)) for s in range(20)]
    uni = [final(SIX[np.random.default_rng(s).choice(6, 2, replace=False)]) for s in range(20)]
    assert np.mean(pp) <= np.mean(uni)


# -- prototype sets --------------------------------------------------------------

def test_single_point_class_any_k():
    pool = ClassPool.from_arrays([[[2.0, -1.0]]])
    for mode in ("centroid", "closest_point"):
        protos = build_prototypes(pool, 4, mode)
        np.testing.assert_array_equal(protos[0], np.tile([2.0, -1.0], (4, 1)))


def test_closest_point_keeps_coinciding_member():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(closest_members(pts, np.array([[1.0, 0.0]])), [[1.0, 0.0]])


def test_centroid_vs_closest_point():
    pool = ClassPool.from_arrays([SIX])
    cen = build_prototypes(pool, 2, "centroid", seed=0)
    near = build_prototypes(pool, 2, "closest_point", seed=0)
    assert rowset(np.round(cen[0], 9)) == rowset(np.round([[1 / 3, 1 / 3], [31 / 3, 31 / 3]], 9))
    assert rowset(near[0]) == [(0.0, 0.0), (10.0, 10.0)]


def test_closest_point_ties_take_lowest_index():
    pts = np.array([[1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(closest_members(pts, np.array([[0.0, 0.0]])), [[1.0, 0.0]])


def test_closest_point_centers_are_members():
    rng = np.random.default_rng(5)
    pool = ClassPool.from_arrays([rng.standard_normal((40, 2)), rng.standard_normal((30, 2)) + 4])
    protos = build_prototypes(pool, 5, "closest_point", seed=2)
    for y in (0, 1):
        for c in protos[y]:
            assert any(np.array_equal(c, p) for p in pool[y])


def test_empty_class_named():
    pool = ClassPool({0: np.zeros((3, 2)), 1: np.empty((0, 2))}, 2, 2)
    with pytest.raises(DataError, match="class 1"):
        build_prototypes(pool, 2)


def test_bad_mode():
    with pytest.raises(ConfigError):
        build_prototypes(ClassPool.from_arrays([SIX]), 2, "medoid")


def test_workers_do_not_change_result():
    rng = np.random.default_rng(0)
    pool = ClassPool.from_arrays([rng.standard_normal((60, 2)) + 3 * y for y in range(4)])
    a = build_prototypes(pool, 6, seed=9, workers=1)
    b = build_prototypes(pool, 6, seed=9, workers=4)
    for y in range(4):
        assert a[y].tobytes() == b[y].tobytes()


def test_save_load(tmp_path):
    pool = ClassPool.from_arrays([SIX, SIX + 1])
    protos = build_prototypes(pool, 2, "closest_point", seed=1)
    protos.save(tmp_path / "p.txt", 2)
    assert (tmp_path / "p.txt").read_text().splitlines()[0] == "#dim=2 classes=2 k=2 mode=closest_point"
    back = PrototypeSet.load(tmp_path / "p.txt")
    assert back.K == 2 and back.mode == "closest_point"
    for y in (0, 1):
        np.testing.assert_array_equal(back[y], protos[y])


# -- assignment ----------------------------------------------------------------

@pytest.mark.parametrize("K, ipc, expected", [
    (3, 3, [1, 2, 3]),
    (2, 5, [1, 2, 1, 2, 1]),
    (1, 4, [1, 1, 1, 1]),
])
def test_assignments(K, ipc, expected):
    assert assign_prototypes(K, ipc).tolist() == expected


@given(st.integers(1, 20), st.integers(1, 60))
def test_assignment_balance(K, ipc):
    a = assign_prototypes(K, ipc)
    assert a.min() >= 1 and a.max() <= K
    if ipc >= K:
        counts = np.bincount(a, minlength=K + 1)[1:]
        assert counts.min() >= ipc // K
