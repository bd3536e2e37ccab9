import numpy as np
import pytest

from clusterkv.clustering import KMeansConfig, k_for_size, spherical_kmeans, split_two
from clusterkv.errors import EmptyInput, TooFewPoints

from oracles import exhaustive_best_objective, kmeans_objective, unit_rows


def around(pole, n, max_angle_deg, rng):
    pole = np.asarray(pole, dtype=float)
    ang = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, n))
    base = np.arctan2(pole[1], pole[0])
    return np.stack([np.cos(base + ang), np.sin(base + ang)], axis=1)


def test_identical_points_single_centroid():
    res = spherical_kmeans(np.tile([1.0, 0.0], (10, 1)), KMeansConfig(k=1))
    np.testing.assert_allclose(res.centroids[0], [1, 0])
    assert res.objective == pytest.approx(1.0)


def test_two_poles_full_purity():
    rng = np.random.default_rng(3)
    pts = np.vstack([around([1, 0], 20, 9.9, rng), around([-1, 0], 20, 9.9, rng)])
    truth = np.array([0] * 20 + [1] * 20)
    res = spherical_kmeans(pts, KMeansConfig(k=2, seed=11))
    # brute-force: each point's nearest final centroid must match its generating pole's cluster
    nearest = np.argmax(unit_rows(pts) @ unit_rows(res.centroids).T, axis=1)
    assert np.array_equal(nearest, res.assignments)
    assert len(set(zip(truth, res.assignments))) == 2


def test_tiny_instance_near_exhaustive_optimum():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((8, 2))
    best = exhaustive_best_objective(pts, 3)
    got = max(spherical_kmeans(pts, KMeansConfig(k=3, seed=s)).objective for s in range(10))
    assert got >= best - 0.05 * abs(best)
    assert got <= best + 1e-12


def test_reported_objective_matches_oracle():
    rng = np.random.default_rng(8)
    pts = rng.standard_normal((30, 5))
    res = spherical_kmeans(pts, KMeansConfig(k=4, seed=2))
    assert res.objective == pytest.approx(kmeans_objective(pts, res.assignments, 4), abs=1e-12)
    assert -1.0 <= res.objective <= 1.0


def test_every_centroid_has_members():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((12, 3))
    res = spherical_kmeans(pts, KMeansConfig(k=6, seed=4))
    assert sorted(set(res.assignments.tolist())) == list(range(6))


def test_k_clamped_to_point_count():
    res = spherical_kmeans([[1.0, 0.0], [0.0, 1.0]], KMeansConfig(k=5))
    assert res.k == 2


def test_local_optimality_after_convergence():
    rng = np.random.default_rng(12)
    for seed in range(5):
        pts = rng.standard_normal((40, 4))
        res = spherical_kmeans(pts, KMeansConfig(k=3, seed=seed, tol=0.0, max_iters=200))
        assert res.iterations_run < 200
        # with centroids fixed, no single point prefers another cluster
        sims = unit_rows(pts) @ unit_rows(res.centroids).T
        assert np.all(sims[np.arange(40), res.assignments] >= sims.max(axis=1) - 1e-12)


def test_deterministic_given_seed():
    pts = np.random.default_rng(0).standard_normal((50, 8))
    a = spherical_kmeans(pts, KMeansConfig(k=5, seed=9))
    b = spherical_kmeans(pts, KMeansConfig(k=5, seed=9))
    assert a.assignments.tobytes() == b.assignments.tobytes()
    assert a.centroids.tobytes() == b.centroids.tobytes()


def test_empty_input():
    with pytest.raises(EmptyInput):
        spherical_kmeans([], KMeansConfig(k=1))


def test_k_for_size():
    assert k_for_size(1, 32) == 1
    assert k_for_size(64, 32) == 2
    assert k_for_size(65, 32) == 3


def test_split_two_examples():
    res = split_two([[1.0, 0.0], [0.0, 1.0]])
    assert sorted(len(res.members(j)) for j in range(2)) == [1, 1]

    rng = np.random.default_rng(4)
    pts = np.vstack([around([1, 0], 10, 5, rng), around([0, 1], 10, 5, rng)])
    res = split_two(pts, seed=1)
    groups = {tuple(sorted(res.members(j).tolist())) for j in range(2)}
    assert groups == {tuple(range(10)), tuple(range(10, 20))}

    res = split_two(np.tile([0.3, 0.4], (5, 1)))
    assert res.degenerate
    assert sorted(len(res.members(j)) for j in range(2)) == [1, 4]

    with pytest.raises(TooFewPoints):
        split_two([[1.0, 0.0]])
