import itertools
import logging

import numpy as np
import pytest

from scan2print.geometry import (
    PointCloud,
    RigidTransform,
    TriangleMesh,
    rotation_about_point,
    rotation_angle,
    transform_points,
)
from scan2print.scansim import (
    CameraIntrinsics,
    DepthImage,
    NoiseModel,
    TurntableState,
    add_noise,
    advance,
    backproject,
    bilateral_filter,
    render_depth,
    render_view,
    simulate_scan,
    turntable_command,
    write_pgm,
)
from scan2print.shapes import make_icosphere, make_rect

from oracles import point_mesh_distance, ray_sphere_depth

CAM = CameraIntrinsics()
SMALL_CAM = CameraIntrinsics(width=160, height=120, fx=140.0, fy=140.0, cx=80.0, cy=60.0)
Y_AXIS = np.array([0.0, 1.0, 0.0])


def state_invariants_hold(s: TurntableState) -> bool:
    if s.motor and not (s.green_led and not s.red_led):
        return False
    if not s.motor and not s.halted and not s.red_led:
        return False
    if s.halted and (s.motor or s.green_led or s.red_led):
        return False
    return True


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))


class TestTurntable:
    def test_initial_state_is_idle_with_red_on(self):
        s = TurntableState()
        assert not s.motor and s.red_led and not s.green_led
        assert s.angle == 0.0 and not s.halted
        assert state_invariants_hold(s)

    def test_start_then_stop(self):
        s = turntable_command(TurntableState(), "1")
        assert s.motor and s.green_led and not s.red_led
        s = turntable_command(s, "0")
        assert not s.motor and s.red_led and not s.green_led

    def test_halt_from_every_command_state(self):
        for prefix in ["", "1", "0", "10", "01"]:
            s = TurntableState()
            for b in prefix:
                s = turntable_command(s, b)
            s = turntable_command(s, "2")
            assert s.halted
            assert not s.motor and not s.green_led and not s.red_led

    def test_reset_zeroes_angle_and_clears_halt(self):
        s = turntable_command(TurntableState(), "1")
        s = advance(s, 1.8 * 17)
        assert s.angle == pytest.approx(170.0)
        s = turntable_command(s, "2")
        s = turntable_command(s, "reset")
        assert s.angle == 0.0
        assert not s.halted and s.red_led

    def test_unknown_byte_is_ignored_with_warning(self, caplog):
        s = turntable_command(TurntableState(), "1")
        with caplog.at_level(logging.WARNING, logger="scan2print.scansim"):
            t = turntable_command(s, "x")
        assert t == s
        assert "unknown turntable command" in caplog.text

    def test_advance_requires_motor_on(self):
        s = advance(TurntableState(), 100.0)
        assert s.angle == 0.0

    def test_advance_ignores_halted_motor(self):
        s = turntable_command(TurntableState(), "2")
        assert advance(s, 10.0).angle == 0.0

    def test_advance_rejects_negative_time(self):
        with pytest.raises(ValueError, match="nonnegative"):
            advance(TurntableState(), -0.1)

    def test_one_interval_is_ten_degrees(self):
        s = turntable_command(TurntableState(), "1")
        assert advance(s, 1.8).angle == pytest.approx(10.0)

    def test_thirty_six_cycles_complete_the_circle(self):
        s = TurntableState()
        for _ in range(36):
            s = turntable_command(s, "1")
            s = advance(s, 1.8)
            s = turntable_command(s, "0")
        assert s.angle == pytest.approx(360.0)
        s = turntable_command(s, "2")
        assert s.halted and state_invariants_hold(s)

    def test_invariants_hold_for_all_short_command_sequences(self):
        # exhaustive model check over the full protocol alphabet
        alphabet = ["0", "1", "2", "reset"]
        for length in range(1, 7):
            for seq in itertools.product(alphabet, repeat=length):
                s = TurntableState()
                for b in seq:
                    s = turntable_command(s, b)
                    assert state_invariants_hold(s), (seq, s)
                s = advance(s, 1.8)
                assert state_invariants_hold(s)


class TestTypes:
    def test_camera_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError, match="fx"):
            CameraIntrinsics(fx=0.0)

    def test_camera_rejects_center_outside_image(self):
        with pytest.raises(ValueError, match="cx"):
            CameraIntrinsics(cx=320.0)

    def test_camera_rejects_inverted_depth_range(self):
        with pytest.raises(ValueError, match="depth_min"):
            CameraIntrinsics(depth_min=2.0, depth_max=1.0)

    def test_depth_image_rejects_negative_values(self):
        with pytest.raises(ValueError, match="nonnegative"):
            DepthImage(np.array([[0.5, -0.1]]))

    def test_depth_image_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match="2-D"):
            DepthImage(np.zeros(5))

    def test_depth_image_shape_accessors(self):
        d = DepthImage(np.zeros((120, 160)))
        assert d.height == 120 and d.width == 160

    def test_noise_model_rejects_negative_sigma(self):
        with pytest.raises(ValueError, match="gaussian_sigma"):
            NoiseModel(gaussian_sigma=-1e-3)

    def test_noise_model_rejects_bad_probability(self):
        with pytest.raises(ValueError, match="probability"):
            NoiseModel(specular_hole_rate=1.5)


class TestRenderDepth:
    def test_empty_mesh_renders_black(self):
        d = render_depth(empty_mesh(), 0.0, SMALL_CAM)
        assert d.values.shape == (120, 160)
        assert np.all(d.values == 0.0)

    def test_centered_unit_square_depth_is_exact(self):
        mesh = make_rect(1.0, 1.0, z=1.0)
        d = render_depth(mesh, 0.0, CAM)
        assert d.values[int(CAM.cy), int(CAM.cx)] == pytest.approx(1.0, abs=1e-6)

    def test_sphere_matches_analytic_ray_cast(self):
        # fine tessellation keeps the facet sagitta below the tolerance;
        # rim pixels are excluded because grazing rays amplify facet
        # error by 1/cos(incidence)
        center = np.array([0.0, 0.0, 0.5])
        mesh = make_icosphere(subdivisions=6, radius=0.1, center=center)
        d = render_depth(mesh, 0.0, SMALL_CAM).values
        vv, uu = np.nonzero(d)
        dirs = np.column_stack(
            [
                (uu - SMALL_CAM.cx) / SMALL_CAM.fx,
                (vv - SMALL_CAM.cy) / SMALL_CAM.fy,
                np.ones(len(uu)),
            ]
        )
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        closest = np.linalg.norm(np.cross(dirs, np.broadcast_to(center, dirs.shape)), axis=1)
        keep = closest <= 0.6 * 0.1
        vv, uu = vv[keep], uu[keep]
        rng = np.random.default_rng(11)
        pick = rng.choice(len(vv), size=100, replace=False)
        for v, u in zip(vv[pick], uu[pick]):
            expect = ray_sphere_depth(
                u, v, SMALL_CAM.fx, SMALL_CAM.fy, SMALL_CAM.cx, SMALL_CAM.cy,
                center, 0.1,
            )
            assert d[v, u] == pytest.approx(expect, abs=1e-5)

    def test_depth_grows_when_object_moves_away(self):
        near = render_depth(make_rect(0.3, 0.3, z=0.5), 0.0, SMALL_CAM).values
        far = render_depth(make_rect(0.3, 0.3, z=0.8), 0.0, SMALL_CAM).values
        both = (near > 0) & (far > 0)
        assert both.any()
        assert np.all(far[both] > near[both])

    def test_object_closer_than_depth_min_is_invisible(self):
        d = render_depth(make_rect(0.05, 0.05, z=0.1), 0.0, CAM)
        assert np.all(d.values == 0.0)

    def test_rotation_moves_object_through_pivot(self):
        mesh = make_rect(0.1, 0.1, z=0.5)
        ahead = render_depth(mesh, 0.0, SMALL_CAM, pivot=(0.0, 0.0, 0.5))
        # half a turn about its own center flips the square in place
        flipped = render_depth(mesh, 180.0, SMALL_CAM, pivot=(0.0, 0.0, 0.5))
        assert np.count_nonzero(ahead.values) == pytest.approx(
            np.count_nonzero(flipped.values), rel=0.05
        )
        # the same turn about the camera origin swings it behind the camera
        gone = render_depth(mesh, 180.0, SMALL_CAM, pivot=(0.0, 0.0, 0.0))
        assert np.all(gone.values == 0.0)

    def test_nearest_surface_wins(self):
        sphere = make_icosphere(subdivisions=3, radius=0.1, center=(0.0, 0.0, 0.5))
        d = render_depth(sphere, 0.0, SMALL_CAM).values
        c = d[SMALL_CAM.height // 2, SMALL_CAM.width // 2]
        assert c == pytest.approx(0.4, abs=1e-3)

    def test_render_is_deterministic(self):
        mesh = make_icosphere(subdivisions=2, radius=0.1, center=(0.0, 0.0, 0.5))
        a = render_depth(mesh, 33.0, SMALL_CAM).values
        b = render_depth(mesh, 33.0, SMALL_CAM).values
        assert np.array_equal(a, b)

    def test_render_view_reports_hit_triangles_and_normals(self):
        view = render_view(make_rect(0.3, 0.3, z=0.5), 0.0, SMALL_CAM)
        hit = view.triangle_ids >= 0
        assert np.array_equal(hit, view.depth.values > 0)
        # the rect faces the camera, so every hit normal is parallel to z
        assert np.allclose(np.abs(view.normals[hit][:, 2]), 1.0)
        assert np.all(view.normals[~hit] == 0.0)


class TestAddNoise:
    def test_zero_sigma_and_disabled_dropout_is_identity(self):
        view = render_view(make_rect(0.3, 0.3, z=0.5), 0.0, SMALL_CAM)
        quiet = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=180.0)
        noisy = add_noise(view.depth, quiet, view.normals, seed=3, cam=SMALL_CAM)
        assert np.array_equal(noisy.values, view.depth.values)

    def test_sample_sigma_matches_request(self):
        view = render_view(make_rect(2.0, 2.0, z=1.0), 0.0, CAM)
        assert np.count_nonzero(view.depth.values) >= 10_000
        model = NoiseModel(gaussian_sigma=0.002, edge_dropout_angle=180.0)
        noisy = add_noise(view.depth, model, view.normals, seed=5, cam=CAM)
        mask = view.depth.values > 0
        delta = noisy.values[mask] - view.depth.values[mask]
        assert np.std(delta) == pytest.approx(0.002, rel=0.1)

    def test_zero_dropout_angle_clears_everything(self):
        view = render_view(make_rect(0.3, 0.3, z=0.5), 0.0, SMALL_CAM)
        model = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=0.0)
        noisy = add_noise(view.depth, model, view.normals, seed=0, cam=SMALL_CAM)
        assert np.all(noisy.values == 0.0)

    def test_grazing_sphere_rim_drops_out(self):
        mesh = make_icosphere(subdivisions=4, radius=0.1, center=(0.0, 0.0, 0.5))
        view = render_view(mesh, 0.0, SMALL_CAM)
        model = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=60.0)
        noisy = add_noise(view.depth, model, view.normals, seed=0, cam=SMALL_CAM)
        h, w = SMALL_CAM.height, SMALL_CAM.width
        assert noisy.values[h // 2, w // 2] > 0  # face-on center survives
        kept = np.count_nonzero(noisy.values)
        total = np.count_nonzero(view.depth.values)
        assert 0 < kept < total  # the rim is gone

    def test_specular_mask_punches_holes(self):
        view = render_view(make_rect(0.3, 0.3, z=0.5), 0.0, SMALL_CAM)
        mask = np.zeros_like(view.depth.values, dtype=bool)
        mask[50:60, 70:80] = True
        model = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=180.0,
                           specular_hole_rate=1.0)
        noisy = add_noise(view.depth, model, view.normals, seed=0,
                          cam=SMALL_CAM, specular_mask=mask)
        assert np.all(noisy.values[50:60, 70:80] == 0.0)
        outside = ~mask & (view.depth.values > 0)
        assert np.array_equal(noisy.values[outside], view.depth.values[outside])

    def test_same_seed_same_noise(self):
        view = render_view(make_rect(0.3, 0.3, z=0.5), 0.0, SMALL_CAM)
        model = NoiseModel(gaussian_sigma=0.01)
        a = add_noise(view.depth, model, view.normals, seed=42, cam=SMALL_CAM)
        b = add_noise(view.depth, model, view.normals, seed=42, cam=SMALL_CAM)
        assert np.array_equal(a.values, b.values)
        c = add_noise(view.depth, model, view.normals, seed=43, cam=SMALL_CAM)
        assert not np.array_equal(a.values, c.values)


class TestBilateralFilter:
    def test_constant_image_is_unchanged(self):
        d = DepthImage(np.full((40, 40), 0.7))
        out = bilateral_filter(d, 2.0, 0.05)
        assert np.allclose(out.values, 0.7, atol=1e-9)

    def test_rejects_nonpositive_sigma(self):
        d = DepthImage(np.full((4, 4), 1.0))
        with pytest.raises(ValueError, match="positive"):
            bilateral_filter(d, 0.0, 0.05)
        with pytest.raises(ValueError, match="positive"):
            bilateral_filter(d, 1.0, -0.1)

    def test_step_edge_stays_put_while_noise_flattens(self):
        rng = np.random.default_rng(7)
        clean = np.where(np.arange(80) < 40, 1.0, 2.0)[None, :].repeat(60, axis=0)
        noisy = clean + rng.normal(0.0, 0.01, size=clean.shape)
        out = bilateral_filter(DepthImage(noisy), 2.0, 0.05).values
        # each row still jumps across 1.5 at the original column
        for row in out:
            cross = np.flatnonzero(row >= 1.5)[0]
            assert abs(cross - 40) <= 1
        # flat regions away from the edge lose at least half their noise
        flat_in = noisy[:, 5:30] - 1.0
        flat_out = out[:, 5:30] - np.mean(out[:, 5:30])
        assert np.std(flat_out) <= 0.5 * np.std(flat_in)

    def test_lone_pixel_survives_untouched(self):
        vals = np.zeros((31, 31))
        vals[15, 15] = 1.25
        out = bilateral_filter(DepthImage(vals), 2.0, 0.05).values
        assert np.array_equal(out, vals)

    def test_small_hole_is_filled(self):
        vals = np.full((21, 21), 0.9)
        vals[10, 10] = 0.0
        out = bilateral_filter(DepthImage(vals), 2.0, 0.05).values
        assert out[10, 10] == pytest.approx(0.9, abs=1e-9)

    def test_zero_margin_stays_zero(self):
        vals = np.zeros((41, 41))
        vals[15:26, 15:26] = 1.0
        out = bilateral_filter(DepthImage(vals), 1.0, 0.05).values
        assert np.all(out[:10, :] == 0.0)
        assert np.all(out[:, :10] == 0.0)


class TestBackproject:
    def test_empty_image_gives_empty_cloud(self):
        cloud = backproject(DepthImage(np.zeros((10, 12))), SMALL_CAM)
        assert isinstance(cloud, PointCloud)
        assert len(cloud.points) == 0

    def test_center_pixel_lands_on_optical_axis(self):
        vals = np.zeros((SMALL_CAM.height, SMALL_CAM.width))
        vals[int(SMALL_CAM.cy), int(SMALL_CAM.cx)] = 0.8
        cloud = backproject(DepthImage(vals), SMALL_CAM)
        assert np.allclose(cloud.points, [[0.0, 0.0, 0.8]])

    def test_points_come_out_row_major(self):
        vals = np.zeros((4, 4))
        vals[1, 2] = 1.0
        vals[2, 0] = 1.0
        vals[3, 3] = 1.0
        cam = CameraIntrinsics(width=4, height=4, fx=2.0, fy=2.0, cx=2.0, cy=2.0)
        cloud = backproject(DepthImage(vals), cam)
        expect_xy = np.array([[2 - 2.0, 1 - 2.0], [0 - 2.0, 2 - 2.0], [3 - 2.0, 3 - 2.0]])
        assert np.allclose(cloud.points[:, :2], expect_xy / 2.0)

    def test_pinhole_formula(self):
        vals = np.zeros((SMALL_CAM.height, SMALL_CAM.width))
        vals[30, 100] = 2.0
        p = backproject(DepthImage(vals), SMALL_CAM).points[0]
        assert p[0] == pytest.approx((100 - SMALL_CAM.cx) * 2.0 / SMALL_CAM.fx)
        assert p[1] == pytest.approx((30 - SMALL_CAM.cy) * 2.0 / SMALL_CAM.fy)
        assert p[2] == 2.0

    def test_round_trip_lies_on_surface(self):
        mesh = make_icosphere(subdivisions=5, radius=0.1, center=(0.0, 0.0, 0.5))
        d = render_depth(mesh, 0.0, SMALL_CAM)
        pts = backproject(d, SMALL_CAM).points
        # exact against the rendered facets themselves
        facet = point_mesh_distance(pts, mesh.vertices, mesh.triangles)
        assert facet.max() <= 1e-9
        # against the ideal sphere the error is the face-center sagitta
        radial = np.abs(np.linalg.norm(pts - [0.0, 0.0, 0.5], axis=1) - 0.1)
        assert radial.max() <= 5e-5


class TestSimulateScan:
    def test_requires_two_views(self):
        with pytest.raises(ValueError, match="at least 2"):
            simulate_scan(empty_mesh(), 1, 10.0, SMALL_CAM, NoiseModel(), seed=0)

    def test_view_count_and_exact_truth_poses(self):
        mesh = make_rect(0.05, 0.05, z=0.5)
        pivot = (0.0, 0.0, 0.5)
        clouds, truths = simulate_scan(
            mesh, 36, 10.0, SMALL_CAM, NoiseModel(gaussian_sigma=0.0), seed=1,
            pivot=pivot,
        )
        assert len(clouds) == 36 and len(truths) == 36
        for i, t in enumerate(truths):
            expect = rotation_about_point(Y_AXIS, np.radians(10.0 * i), pivot)
            assert np.array_equal(t.rotation, expect.rotation)
            assert np.array_equal(t.translation, expect.translation)

    def test_noiseless_clouds_lie_on_posed_surface(self):
        mesh = make_icosphere(subdivisions=4, radius=0.08, center=(0.0, 0.0, 0.5))
        pivot = (0.0, 0.0, 0.5)
        quiet = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=75.0)
        clouds, truths = simulate_scan(
            mesh, 4, 25.0, SMALL_CAM, quiet, seed=2, pivot=pivot,
            sigma_space=None,
        )
        for cloud, truth in zip(clouds, truths):
            assert len(cloud.points) > 500
            posed = transform_points(truth, mesh.vertices)
            sub = cloud.points[:: max(1, len(cloud.points) // 300)]
            dist = point_mesh_distance(sub, posed, mesh.triangles)
            assert dist.max() <= 1e-9

    def test_bilateral_stage_bias_is_bounded(self):
        # with smoothing on, silhouette windows are one sided and curved
        # regions blur, so adherence loosens but stays sub-millimeter
        mesh = make_icosphere(subdivisions=4, radius=0.08, center=(0.0, 0.0, 0.5))
        pivot = (0.0, 0.0, 0.5)
        quiet = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=75.0)
        clouds, truths = simulate_scan(
            mesh, 2, 25.0, SMALL_CAM, quiet, seed=2, pivot=pivot
        )
        posed = transform_points(truths[0], mesh.vertices)
        dist = point_mesh_distance(clouds[0].points, posed, mesh.triangles)
        assert np.median(dist) <= 1e-3
        assert dist.max() <= 5e-3

    def test_same_seed_is_bit_identical(self):
        mesh = make_icosphere(subdivisions=3, radius=0.08, center=(0.0, 0.0, 0.5))
        kwargs = dict(pivot=(0.0, 0.0, 0.5))
        a, _ = simulate_scan(mesh, 3, 20.0, SMALL_CAM, NoiseModel(), seed=9, **kwargs)
        b, _ = simulate_scan(mesh, 3, 20.0, SMALL_CAM, NoiseModel(), seed=9, **kwargs)
        assert all(np.array_equal(x.points, y.points) for x, y in zip(a, b))

    def test_different_seed_changes_clouds(self):
        mesh = make_icosphere(subdivisions=3, radius=0.08, center=(0.0, 0.0, 0.5))
        a, _ = simulate_scan(mesh, 2, 20.0, SMALL_CAM, NoiseModel(), seed=9,
                             pivot=(0.0, 0.0, 0.5))
        b, _ = simulate_scan(mesh, 2, 20.0, SMALL_CAM, NoiseModel(), seed=10,
                             pivot=(0.0, 0.0, 0.5))
        assert not np.array_equal(a[0].points, b[0].points)

    def test_angle_jitter_keeps_truth_consistent_with_clouds(self):
        mesh = make_rect(0.05, 0.05, z=0.5)
        pivot = (0.0, 0.0, 0.5)
        quiet = NoiseModel(gaussian_sigma=0.0, edge_dropout_angle=180.0)
        clouds, truths = simulate_scan(
            mesh, 3, 15.0, SMALL_CAM, quiet, seed=4, pivot=pivot,
            angle_jitter_deg=0.5, sigma_space=None,
        )
        # jittered poses differ from the nominal schedule but view 0 is exact
        nominal = rotation_about_point(Y_AXIS, np.radians(15.0), pivot)
        assert np.array_equal(truths[0].rotation, np.eye(3))
        assert not np.allclose(truths[1].rotation, nominal.rotation)
        for cloud, truth in zip(clouds, truths):
            posed = transform_points(truth, mesh.vertices)
            dist = point_mesh_distance(cloud.points, posed, mesh.triangles)
            assert dist.max() <= 1e-6

    def test_camera_pose_is_respected(self):
        # camera shifted back by 0.3 sees the same scene 0.3 deeper
        mesh = make_rect(0.1, 0.1, z=0.5)
        pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, -0.3]))
        d = render_depth(mesh, 0.0, SMALL_CAM, cam_pose=pose)
        c = d.values[SMALL_CAM.height // 2, SMALL_CAM.width // 2]
        assert c == pytest.approx(0.8, abs=1e-6)


class TestWritePgm:
    def test_header_and_payload(self, tmp_path):
        vals = np.array([[0.0, 0.5], [1.0, 65.535]])
        data = write_pgm(DepthImage(vals), tmp_path / "d.pgm")
        assert (tmp_path / "d.pgm").read_bytes() == data
        header, rest = data.split(b"\n", 1)
        assert header == b"P5"
        dims, rest = rest.split(b"\n", 1)
        assert dims == b"2 2"
        maxval, payload = rest.split(b"\n", 1)
        assert maxval == b"65535"
        values = np.frombuffer(payload, dtype=">u2").reshape(2, 2)
        assert values.tolist() == [[0, 500], [1000, 65535]]

    def test_depths_beyond_range_saturate(self):
        data = write_pgm(DepthImage(np.array([[70.0]])))
        assert np.frombuffer(data[-2:], dtype=">u2")[0] == 65535
