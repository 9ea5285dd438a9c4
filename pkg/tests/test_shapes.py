import numpy as np
import pytest

from scan2print.shapes import (
    make_cube,
    make_cube_with_notch,
    make_dented_sphere,
    make_icosphere,
    make_plane_grid,
    make_rect,
    sample_mesh_surface,
    sample_sphere,
)


def signed_volume(mesh):
    v = mesh.vertices[mesh.triangles]
    return np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0


def edge_face_counts(mesh):
    edges = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


def assert_closed_manifold(mesh):
    counts = edge_face_counts(mesh)
    assert np.all(counts == 2)


class TestCube:
    def test_counts(self):
        cube = make_cube(1.0)
        assert cube.n_vertices == 8
        assert cube.n_triangles == 12

    def test_volume_and_winding(self):
        assert signed_volume(make_cube(2.0)) == pytest.approx(8.0)

    def test_closed(self):
        assert_closed_manifold(make_cube(1.0))

    def test_centered_at_origin(self):
        cube = make_cube(0.25)
        np.testing.assert_allclose(cube.vertices.mean(axis=0), 0.0, atol=1e-15)
        assert cube.vertices.min() == -0.125
        assert cube.vertices.max() == 0.125


class TestCubeWithNotch:
    def test_counts(self):
        m = make_cube_with_notch(0.25, 0.1)
        assert m.n_vertices == 26
        assert m.n_triangles == 48

    def test_volume(self):
        m = make_cube_with_notch(0.25, 0.1)
        assert signed_volume(m) == pytest.approx(0.25**3 - 0.1**3)

    def test_closed(self):
        assert_closed_manifold(make_cube_with_notch(0.25, 0.1))

    def test_euler_characteristic(self):
        m = make_cube_with_notch(0.25, 0.1)
        n_edges = len(np.unique(np.sort(
            m.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1), axis=0))
        assert m.n_vertices - n_edges + m.n_triangles == 2

    def test_rotationally_asymmetric(self):
        # The notch must break the 90 degree symmetry about y or ICP tests
        # could converge to a wrong-but-plausible pose.
        m = make_cube_with_notch(0.25, 0.1)
        c = np.cos(np.pi / 2)
        s = np.sin(np.pi / 2)
        rot_y = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        rotated = m.vertices @ rot_y.T
        orig = {tuple(np.round(p, 9)) for p in m.vertices}
        turned = {tuple(np.round(p, 9)) for p in rotated}
        assert orig != turned


class TestIcosphere:
    @pytest.mark.parametrize("level", [0, 1, 2, 3])
    def test_counts(self, level):
        m = make_icosphere(level, radius=1.0)
        assert m.n_vertices == 10 * 4**level + 2
        assert m.n_triangles == 20 * 4**level

    def test_vertices_on_sphere(self):
        m = make_icosphere(2, radius=0.5, center=(1.0, 2.0, 3.0))
        r = np.linalg.norm(m.vertices - [1.0, 2.0, 3.0], axis=1)
        np.testing.assert_allclose(r, 0.5, atol=1e-12)

    def test_closed_and_positive_volume(self):
        m = make_icosphere(2, radius=1.0)
        assert_closed_manifold(m)
        vol = signed_volume(m)
        sphere = 4 / 3 * np.pi
        assert sphere > vol > 0.95 * sphere

    def test_deterministic(self):
        a = make_icosphere(1)
        b = make_icosphere(1)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.triangles, b.triangles)


class TestDentedSphere:
    def test_closed(self):
        assert_closed_manifold(make_dented_sphere(3, radius=0.1))

    def test_dent_breaks_symmetry(self):
        m = make_dented_sphere(3, radius=0.1)
        r = np.linalg.norm(m.vertices, axis=1)
        assert r.min() < 0.09
        assert r.max() == pytest.approx(0.1, abs=1e-9)


class TestPlanesAndSampling:
    def test_rect_faces_minus_z(self):
        m = make_rect(1.0, 1.0, z=0.5)
        v = m.vertices[m.triangles[0]]
        n = np.cross(v[1] - v[0], v[2] - v[0])
        assert n[2] < 0

    def test_plane_grid_counts(self):
        cloud = make_plane_grid(20, 20, spacing=0.01)
        assert len(cloud) == 400
        assert cloud.has_normals
        np.testing.assert_array_equal(cloud.normals[:, 2], 1.0)

    def test_plane_grid_scan_order(self):
        cloud = make_plane_grid(3, 2, spacing=1.0)
        assert len(cloud) == 6
        # x varies fastest
        np.testing.assert_allclose(cloud.points[0, :2], cloud.points[1, :2] - [1, 0])

    def test_sample_sphere_radius_and_normals(self):
        cloud = sample_sphere(500, radius=2.0, center=(1, 0, 0), seed=7)
        r = np.linalg.norm(cloud.points - [1, 0, 0], axis=1)
        np.testing.assert_allclose(r, 2.0, atol=1e-9)
        outward = (cloud.points - [1, 0, 0]) / 2.0
        np.testing.assert_allclose(cloud.normals, outward, atol=1e-9)

    def test_sample_sphere_deterministic(self):
        a = sample_sphere(100, seed=3)
        b = sample_sphere(100, seed=3)
        np.testing.assert_array_equal(a.points, b.points)

    def test_sample_mesh_surface_on_surface(self):
        cube = make_cube(1.0)
        cloud = sample_mesh_surface(cube, 1000, seed=1)
        assert len(cloud) == 1000
        # every sample lies on the cube boundary: max coordinate magnitude 0.5
        assert np.max(np.abs(cloud.points)) == pytest.approx(0.5)
        on_face = np.isclose(np.abs(cloud.points), 0.5).any(axis=1)
        assert on_face.all()

    def test_sample_mesh_normals_unit(self):
        cloud = sample_mesh_surface(make_icosphere(1), 200, seed=2)
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-9)
