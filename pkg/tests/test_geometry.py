import numpy as np
import pytest

from scan2print.geometry import (
    PointCloud,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    compose,
    invert,
    merge,
    rotation_about_axis,
    rotation_about_point,
    rotation_angle,
    rotation_y,
    transform_points,
)


def random_transform(rng) -> RigidTransform:
    axis = rng.normal(size=3)
    angle = rng.uniform(-np.pi, np.pi)
    return RigidTransform(rotation_about_axis(axis, angle), rng.normal(size=3))


class TestRigidTransform:
    def test_identity_is_noop(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(50, 3))
        out = transform_points(RigidTransform.identity(), pts)
        np.testing.assert_array_equal(out, pts)

    def test_compose_matches_sequential_application(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = random_transform(rng), random_transform(rng)
            pts = rng.normal(size=(10, 3))
            lhs = transform_points(compose(a, b), pts)
            rhs = transform_points(a, transform_points(b, pts))
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_invert_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            t = random_transform(rng)
            back = compose(t, invert(t))
            np.testing.assert_allclose(back.rotation, np.eye(3), atol=1e-12)
            np.testing.assert_allclose(back.translation, 0.0, atol=1e-12)

    def test_long_composition_chain_stays_orthonormal(self):
        rng = np.random.default_rng(3)
        t = RigidTransform.identity()
        for _ in range(100):
            t = compose(t, random_transform(rng))
        drift = np.abs(t.rotation.T @ t.rotation - np.eye(3)).max()
        assert drift <= 1e-9

    def test_apply_preserves_pairwise_distances(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(40, 3))
        t = random_transform(rng)
        moved = transform_points(t, pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
        np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_scaled_rotation_rejected(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    def test_rotation_angle_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            angle = rng.uniform(0.0, np.pi)
            r = rotation_about_axis(rng.normal(size=3), angle)
            assert rotation_angle(r) == pytest.approx(angle, abs=1e-9)

    def test_rotation_about_point_fixes_pivot(self):
        pivot = np.array([0.3, -0.2, 0.9])
        t = rotation_about_point([0.0, 1.0, 0.0], 0.7, pivot)
        np.testing.assert_allclose(transform_points(t, pivot[None, :])[0], pivot, atol=1e-12)
        np.testing.assert_allclose(t.rotation, rotation_y(0.7), atol=1e-12)

    def test_normals_rotate_but_do_not_translate(self):
        rng = np.random.default_rng(6)
        t = random_transform(rng)
        n = rng.normal(size=(20, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        cloud = PointCloud(rng.normal(size=(20, 3)), n)
        out = apply_transform(t, cloud)
        np.testing.assert_allclose(out.normals, n @ t.rotation.T, atol=1e-12)
        np.testing.assert_allclose(
            np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-9
        )


class TestPointCloud:
    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))

    def test_rejects_nan(self):
        pts = np.zeros((3, 3))
        pts[1, 2] = np.nan
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_rejects_non_unit_normals(self):
        pts = np.zeros((2, 3))
        bad = np.array([[1.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
        with pytest.raises(ValueError):
            PointCloud(pts, bad)

    def test_rejects_mismatched_normal_shape(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), np.tile([0.0, 0.0, 1.0], (2, 1)))

    def test_arrays_are_immutable(self):
        c = PointCloud(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            c.points[0, 0] = 1.0

    def test_empty_cloud_is_legal(self):
        assert len(PointCloud(np.zeros((0, 3)))) == 0


class TestMerge:
    def test_concatenation_preserves_order(self):
        a = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        b = PointCloud(np.array([[2.0, 0.0, 0.0]]))
        m = merge([a, b])
        np.testing.assert_array_equal(m.points[:, 0], [0.0, 1.0, 2.0])

    def test_36_clouds_of_1000(self):
        rng = np.random.default_rng(7)
        clouds = [PointCloud(rng.normal(size=(1000, 3))) for _ in range(36)]
        assert len(merge(clouds)) == 36000

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            merge([])

    def test_mixed_normal_presence_rejected(self):
        a = PointCloud(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
        b = PointCloud(np.zeros((1, 3)))
        with pytest.raises(ValueError):
            merge([a, b])


class TestTriangleMesh:
    def test_valid_mesh(self):
        m = TriangleMesh(np.eye(3), np.array([[0, 1, 2]]))
        assert m.n_triangles == 1

    def test_out_of_range_index(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.eye(3), np.array([[0, 1, 3]]))

    def test_repeated_vertex_in_triangle(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.eye(3), np.array([[0, 1, 1]]))

    def test_duplicated_triangle(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.eye(3), np.array([[0, 1, 2], [2, 0, 1]]))
