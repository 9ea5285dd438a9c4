"""End-to-end reconstruction: fixed stage order from acquisition to export.

The stage sequence never changes: acquire, passthrough, downsample, sor,
normals, align, mls, mesh, laplacian, fill_holes, audit, export. Stages
that do not apply to the current configuration still appear in the run
record with a note saying why they did nothing, so reports from any two
runs line up.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

from .config import PipelineConfig
from .filters import (
    AxisRange,
    estimate_normals,
    passthrough,
    statistical_outlier_removal,
    voxel_downsample,
)
from .formats import read_ply, write_ply, write_stl
from .geometry import PointCloud, RigidTransform, TriangleMesh
from .meshing import (
    GreedyParams,
    GridParams,
    MeshAudit,
    fill_holes,
    greedy_triangulation,
    grid_projection,
    mesh_audit,
)
from .register import AlignmentReport, IcpParams, align_sequence, transforms_to_text
from .scansim import CameraIntrinsics, NoiseModel, simulate_scan
from .smooth import LaplacianParams, MlsParams, laplacian_smooth, mls_smooth

log = logging.getLogger(__name__)

__all__ = [
    "STAGES",
    "StageError",
    "SimulatedSource",
    "camera_from_config",
    "PipelineRun",
    "run_pipeline",
]

STAGES = (
    "acquire",
    "passthrough",
    "downsample",
    "sor",
    "normals",
    "align",
    "mls",
    "mesh",
    "laplacian",
    "fill_holes",
    "audit",
    "export",
)


class StageError(RuntimeError):
    """A pipeline stage failed; earlier outputs are left on disk."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class SimulatedSource:
    """Acquisition spec: scan a ground-truth mesh on the virtual turntable."""

    mesh: TriangleMesh
    seed: int


@dataclass
class PipelineRun:
    """Everything one pipeline execution produced, stage by stage."""

    config: PipelineConfig
    timings: list[tuple[str, float]] = dataclass_field(default_factory=list)
    notes: dict[str, str] = dataclass_field(default_factory=dict)
    clouds: list[PointCloud] = dataclass_field(default_factory=list)
    alignment: AlignmentReport | None = None
    merged: PointCloud | None = None
    mesh: TriangleMesh | None = None
    audit: MeshAudit | None = None
    truth_transforms: tuple[RigidTransform, ...] | None = None
    outputs: list[Path] = dataclass_field(default_factory=list)
    error: str | None = None


def camera_from_config(cfg: PipelineConfig) -> CameraIntrinsics:
    """CameraIntrinsics assembled from the cam_* and depth_* config fields."""
    return CameraIntrinsics(
        width=cfg.cam_width,
        height=cfg.cam_height,
        fx=cfg.cam_fx,
        fy=cfg.cam_fy,
        cx=cfg.cam_cx,
        cy=cfg.cam_cy,
        depth_min=cfg.depth_min,
        depth_max=cfg.depth_max,
    )


def _load_cloud_dir(path: Path) -> list[PointCloud]:
    files = sorted(path.glob("*.ply"))
    if not files:
        raise FileNotFoundError(f"no .ply files in {path}")
    clouds = []
    for f in files:
        obj = read_ply(f)
        if isinstance(obj, TriangleMesh):
            raise ValueError(f"{f} holds a mesh, expected a point cloud")
        clouds.append(obj)
    return clouds


def _acquire(run: PipelineRun, source) -> list[PointCloud]:
    cfg = run.config
    if isinstance(source, SimulatedSource):
        noise = NoiseModel(
            gaussian_sigma=cfg.sim_sigma,
            edge_dropout_angle=cfg.sim_dropout_angle,
            specular_hole_rate=cfg.sim_specular_rate,
        )
        clouds, truths = simulate_scan(
            source.mesh,
            cfg.sim_views,
            cfg.sim_degrees_per_view,
            camera_from_config(cfg),
            noise,
            source.seed,
            pivot=(cfg.pivot_x, cfg.pivot_y, cfg.pivot_z),
            sigma_space=cfg.sim_bilateral_sigma_space,
            sigma_depth=cfg.sim_bilateral_sigma_depth,
            angle_jitter_deg=cfg.sim_angle_jitter,
        )
        run.truth_transforms = tuple(truths)
        run.notes["acquire"] = (
            f"simulated {len(clouds)} views, {sum(len(c) for c in clouds)} points"
        )
        return clouds
    if isinstance(source, (str, Path)):
        clouds = _load_cloud_dir(Path(source))
        run.notes["acquire"] = (
            f"loaded {len(clouds)} clouds, {sum(len(c) for c in clouds)} points"
        )
        return clouds
    clouds = list(source)
    if not clouds:
        raise ValueError("no input clouds")
    run.notes["acquire"] = (
        f"received {len(clouds)} clouds, {sum(len(c) for c in clouds)} points"
    )
    return clouds


def _crop_bounds(cfg: PipelineConfig) -> AxisRange:
    return AxisRange(
        cfg.crop_xmin, cfg.crop_xmax,
        cfg.crop_ymin, cfg.crop_ymax,
        cfg.crop_zmin, cfg.crop_zmax,
    )


def _count_note(before: int, after: int) -> str:
    return f"{before} -> {after} points"


def _export(run: PipelineRun, out_dir: Path) -> None:
    from . import report as report_mod

    out_dir.mkdir(parents=True, exist_ok=True)
    if run.merged is not None:
        p = out_dir / "merged.ply"
        write_ply(run.merged, p)
        run.outputs.append(p)
    if run.mesh is not None:
        p = out_dir / "mesh.ply"
        write_ply(run.mesh, p)
        run.outputs.append(p)
        p = out_dir / "mesh.stl"
        write_stl(run.mesh, p)
        run.outputs.append(p)
    if run.truth_transforms is not None:
        p = out_dir / "truth_transforms.txt"
        p.write_text(transforms_to_text(run.truth_transforms))
        run.outputs.append(p)
    run.outputs.extend(report_mod.write_figures(run, out_dir))
    p = out_dir / "report.txt"
    p.write_text(report_mod.render_report(run))
    run.outputs.append(p)


def run_pipeline(config: PipelineConfig, source, out_dir) -> PipelineRun:
    """Execute every stage in the fixed order and write the artifacts.

    ``source`` is a directory of .ply clouds, a list of PointClouds, or
    a SimulatedSource. Outputs land in ``out_dir``: merged.ply, mesh.ply,
    mesh.stl, report.txt with figures, and truth_transforms.txt when the
    input was simulated. A stage failure raises StageError after writing
    whatever artifacts earlier stages produced plus a failure report.
    """
    run = PipelineRun(config)
    out_dir = Path(out_dir)

    def stage(name: str, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            run.timings.append((name, time.perf_counter() - t0))
            run.error = f"stage {name!r} failed: {exc}"
            raise StageError(name, exc) from exc
        run.timings.append((name, time.perf_counter() - t0))
        return result

    try:
        run.clouds = stage("acquire", lambda: _acquire(run, source))

        bounds = _crop_bounds(config)
        if any(v is not None for v in vars(bounds).values()):
            before = sum(len(c) for c in run.clouds)
            run.clouds = stage(
                "passthrough", lambda: [passthrough(c, bounds) for c in run.clouds]
            )
            run.notes["passthrough"] = _count_note(before, sum(len(c) for c in run.clouds))
        else:
            stage("passthrough", lambda: None)
            run.notes["passthrough"] = "no crop bounds configured"

        before = sum(len(c) for c in run.clouds)
        run.clouds = stage(
            "downsample",
            lambda: [voxel_downsample(c, config.leaf_size) for c in run.clouds],
        )
        run.notes["downsample"] = (
            f"leaf {config.leaf_size}: " + _count_note(before, sum(len(c) for c in run.clouds))
        )

        before = sum(len(c) for c in run.clouds)
        run.clouds = stage(
            "sor",
            lambda: [
                statistical_outlier_removal(c, config.sor_k, config.sor_stddev)[0]
                for c in run.clouds
            ],
        )
        run.notes["sor"] = (
            f"k={config.sor_k} mult={config.sor_stddev}: "
            + _count_note(before, sum(len(c) for c in run.clouds))
        )

        # clouds that arrive with normals keep them: a full-coverage scan's
        # outward orientation cannot be recovered from any single viewpoint
        had = sum(1 for c in run.clouds if c.has_normals)
        run.clouds = stage(
            "normals",
            lambda: [
                c if c.has_normals else estimate_normals(c, config.normals_k)
                for c in run.clouds
            ],
        )
        run.notes["normals"] = (
            f"kept input normals on {had} clouds, "
            f"estimated k={config.normals_k} on {len(run.clouds) - had}"
            if had
            else f"k={config.normals_k}, viewpoint at the camera origin"
        )

        mls_params = MlsParams(
            search_radius=config.mls_radius,
            polynomial_order=config.mls_order,
            upsample=config.mls_upsample,
        )
        if config.mls_pre_align:
            run.clouds = stage(
                "mls_pre",
                lambda: [
                    mls_smooth(c, MlsParams(config.mls_radius, config.mls_order))
                    for c in run.clouds
                ],
            )
            run.notes["mls_pre"] = "per-cloud smoothing before alignment"

        def do_align():
            if len(run.clouds) == 1:
                return AlignmentReport(
                    (RigidTransform.identity(),), run.clouds[0], ()
                )
            return align_sequence(
                run.clouds,
                IcpParams(
                    max_iterations=config.icp_max_iterations,
                    max_correspondence_distance=config.icp_max_corr_dist,
                    transform_epsilon=config.icp_transform_eps,
                    fitness_epsilon=config.icp_fitness_eps,
                ),
                strategy=config.icp_strategy,
            )

        run.alignment = stage("align", do_align)
        run.merged = run.alignment.merged
        run.notes["align"] = (
            f"{config.icp_strategy}, {len(run.clouds)} clouds, "
            f"{len(run.merged)} merged points"
        )

        run.merged = stage("mls", lambda: mls_smooth(run.merged, mls_params))
        run.notes["mls"] = (
            f"radius {config.mls_radius}, order {config.mls_order}, "
            f"{len(run.merged)} points"
        )

        def do_mesh():
            if config.mesher == "gt":
                params = GreedyParams(
                    mu=config.gt_mu,
                    max_nearest_neighbors=config.gt_max_nn,
                    search_radius=config.gt_radius,
                    min_angle=config.gt_min_angle,
                    max_angle=config.gt_max_angle,
                    max_surface_angle=config.gt_max_surface_angle,
                )
                return greedy_triangulation(run.merged, params)
            return grid_projection(
                run.merged,
                GridParams(resolution=config.gp_resolution, padding=config.gp_padding),
            )

        run.mesh = stage("mesh", do_mesh)
        run.notes["mesh"] = (
            f"{config.mesher}: {run.mesh.n_vertices} vertices, "
            f"{run.mesh.n_triangles} triangles"
        )

        if config.mesher == "gt" and config.lap_iterations > 0:
            lap = LaplacianParams(
                iterations=config.lap_iterations,
                relaxation=config.lap_relaxation,
                feature_angle=config.lap_feature_angle,
                boundary_smoothing=config.lap_boundary_smoothing,
            )
            run.mesh = stage("laplacian", lambda: laplacian_smooth(run.mesh, lap))
            run.notes["laplacian"] = (
                f"{config.lap_iterations} iterations, relaxation {config.lap_relaxation}"
            )
        else:
            stage("laplacian", lambda: None)
            run.notes["laplacian"] = (
                "skipped: grid projection output needs no smoothing"
                if config.mesher == "gp"
                else "skipped: 0 iterations configured"
            )

        # hole filling needs manifold boundaries; a reconstruction with
        # non-manifold edges is reported by the audit instead of aborted
        pre_audit = mesh_audit(run.mesh)
        if pre_audit.non_manifold_edges == 0:
            before_tris = run.mesh.n_triangles
            run.mesh = stage(
                "fill_holes", lambda: fill_holes(run.mesh, config.fill_max_boundary)
            )
            run.notes["fill_holes"] = (
                f"{run.mesh.n_triangles - before_tris} triangles added"
            )
        else:
            stage("fill_holes", lambda: None)
            run.notes["fill_holes"] = (
                f"skipped: {pre_audit.non_manifold_edges} non-manifold edges"
            )

        run.audit = stage("audit", lambda: mesh_audit(run.mesh))
        run.notes["audit"] = (
            f"boundary={run.audit.boundary_edges} "
            f"non_manifold={run.audit.non_manifold_edges} "
            f"euler={run.audit.euler_characteristic} "
            f"components={run.audit.components}"
        )

        stage("export", lambda: _export(run, out_dir))
        run.notes["export"] = ", ".join(p.name for p in run.outputs)
    except StageError:
        try:
            _export(run, out_dir)
        except Exception:
            log.exception("failed to write partial outputs after stage error")
        raise
    return run
