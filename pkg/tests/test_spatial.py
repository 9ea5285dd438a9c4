import numpy as np
import pytest

from scan2print.spatial import KdTree

from oracles import brute_k_nearest, brute_nearest, brute_radius


@pytest.fixture(scope="module")
def random_points():
    rng = np.random.default_rng(42)
    return rng.uniform(-1.0, 1.0, size=(1000, 3))


class TestKdTreeContract:
    def test_empty_build_rejected(self):
        with pytest.raises(ValueError):
            KdTree(np.zeros((0, 3)))

    def test_nearest_matches_linear_scan(self, random_points):
        tree = KdTree(random_points)
        rng = np.random.default_rng(7)
        for q in rng.uniform(-1.2, 1.2, size=(100, 3)):
            got = tree.nearest(q)
            want = brute_nearest(random_points, q)
            assert got == want

    def test_k_nearest_matches_linear_scan(self, random_points):
        tree = KdTree(random_points)
        rng = np.random.default_rng(8)
        for q in rng.uniform(-1.2, 1.2, size=(50, 3)):
            k = int(rng.integers(1, 20))
            gi, gd = tree.k_nearest(q, k)
            wi, wd = brute_k_nearest(random_points, q, k)
            np.testing.assert_array_equal(gi, wi)
            np.testing.assert_array_equal(gd, wd)

    def test_radius_matches_linear_scan(self, random_points):
        tree = KdTree(random_points)
        rng = np.random.default_rng(9)
        for q in rng.uniform(-1.2, 1.2, size=(50, 3)):
            r = float(rng.uniform(0.05, 0.5))
            gi, gd = tree.radius_search(q, r)
            wi, wd = brute_radius(random_points, q, r)
            np.testing.assert_array_equal(gi, wi)
            np.testing.assert_array_equal(gd, wd)

    def test_duplicate_points_tie_break_to_lowest_index(self):
        pts = np.tile([0.5, 0.5, 0.5], (10, 1))
        tree = KdTree(pts)
        assert len(tree) == 10
        idx, dist = tree.nearest([0.0, 0.0, 0.0])
        assert idx == 0
        gi, _ = tree.k_nearest([0.0, 0.0, 0.0], 4)
        np.testing.assert_array_equal(gi, [0, 1, 2, 3])

    def test_k_equal_to_size_returns_all_sorted(self, random_points):
        tree = KdTree(random_points)
        gi, gd = tree.k_nearest([0.0, 0.0, 0.0], len(random_points))
        assert len(gi) == len(random_points)
        assert (np.diff(gd) >= 0).all()
        wi, _ = brute_k_nearest(random_points, np.zeros(3), len(random_points))
        np.testing.assert_array_equal(gi, wi)

    def test_k_larger_than_size_returns_all(self):
        pts = np.random.default_rng(1).normal(size=(5, 3))
        tree = KdTree(pts)
        gi, _ = tree.k_nearest([0.0, 0.0, 0.0], 50)
        assert len(gi) == 5

    def test_radius_zero_on_exact_point(self, random_points):
        tree = KdTree(random_points)
        gi, gd = tree.radius_search(random_points[17], 0.0)
        assert 17 in gi
        assert (gd == 0.0).all()

    def test_radius_smaller_than_any_gap_is_empty(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        tree = KdTree(pts)
        gi, _ = tree.radius_search([0.4, 0.0, 0.0], 0.1)
        assert len(gi) == 0

    def test_single_point_tree(self):
        tree = KdTree(np.array([[1.0, 2.0, 3.0]]))
        idx, dist = tree.nearest([1.0, 2.0, 3.0])
        assert idx == 0 and dist == 0.0

    def test_query_batch_agrees_with_single_queries(self, random_points):
        tree = KdTree(random_points)
        rng = np.random.default_rng(10)
        queries = rng.uniform(-1.0, 1.0, size=(20, 3))
        d, i = tree.query_batch(queries, k=3)
        for row, q in enumerate(queries):
            wi, wd = brute_k_nearest(random_points, q, 3)
            np.testing.assert_array_equal(i[row], wi)
            np.testing.assert_allclose(d[row], wd, rtol=1e-12)

    def test_build_deterministic(self, random_points):
        t1 = KdTree(random_points)
        t2 = KdTree(random_points)
        q = np.array([0.1, 0.2, 0.3])
        assert t1.nearest(q) == t2.nearest(q)
