"""Rigid alignment: closed-form pose, point-to-point ICP, sequence chaining."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    FloatArray,
    PointCloud,
    RigidTransform,
    apply_transform,
    compose,
    invert,
    merge,
    rotation_angle,
    transform_points,
)
from .spatial import KdTree

__all__ = [
    "IcpParams",
    "IcpResult",
    "AlignmentReport",
    "RegistrationError",
    "kabsch",
    "icp",
    "align_sequence",
    "transforms_to_text",
    "transforms_from_text",
]


class RegistrationError(RuntimeError):
    """Alignment could not be computed (degenerate input or lost overlap)."""


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    max_correspondence_distance: float = 0.05
    transform_epsilon: float = 1e-8
    fitness_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        for name in (
            "max_iterations",
            "max_correspondence_distance",
            "transform_epsilon",
            "fitness_epsilon",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    fitness: float  # mean squared correspondence distance, m^2
    iterations_used: int
    converged: bool
    # fitness after 0, 1, ... iterations; non-increasing within fp noise
    fitness_history: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class AlignmentReport:
    """Cumulative pose per cloud plus the merged model they produce."""

    transforms: tuple[RigidTransform, ...]
    merged: PointCloud
    pair_fitness: tuple[float, ...]

    def to_text(self) -> str:
        return transforms_to_text(self.transforms)


def _centered(points: FloatArray) -> tuple[FloatArray, FloatArray]:
    centroid = points.mean(axis=0)
    return points - centroid, centroid


def _require_rank2(centered: FloatArray, label: str) -> None:
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise RegistrationError(f"{label} points are collinear or coincident")


def kabsch(source: FloatArray, target: FloatArray) -> RigidTransform:
    """Least-squares rigid transform mapping paired source onto target.

    Cross-covariance SVD with a determinant sign fix, so the result is
    always a proper rotation even when the best orthogonal map would be
    a reflection.
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("source and target must be matching (n, 3) arrays")
    if len(src) < 3:
        raise ValueError(f"need at least 3 correspondences, got {len(src)}")

    src_c, src_mean = _centered(src)
    tgt_c, tgt_mean = _centered(tgt)
    _require_rank2(src_c, "source")
    _require_rank2(tgt_c, "target")

    h = src_c.T @ tgt_c
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = tgt_mean - rotation @ src_mean
    return RigidTransform(rotation, translation)


def _capped_mse(distances: FloatArray, cap: float) -> float:
    return float(np.mean(np.minimum(distances, cap) ** 2))


def icp(source: PointCloud, target: PointCloud, params: IcpParams = IcpParams()) -> IcpResult:
    """Point-to-point ICP of ``source`` onto ``target``.

    Each iteration matches every source point to its nearest target point,
    drops pairs farther than max_correspondence_distance, solves kabsch on
    the survivors, and composes the step into the running transform.

    Fitness is the mean squared correspondence distance with each
    unmatched point contributing the cap distance; that makes the
    sequence provably non-increasing while agreeing with the plain
    mean once every point has a match.
    """
    if len(source) < 3 or len(target) < 3:
        raise ValueError("icp needs at least 3 points in each cloud")
    cap = params.max_correspondence_distance
    tree = KdTree(target.points)

    def nearest(pts):
        # pruning at the cap leaves results unchanged: misses come back as
        # inf and contribute the cap distance to fitness either way
        d, i = tree.query_batch(pts, 1, upper=cap)
        return d[:, 0], i[:, 0]

    total = RigidTransform.identity()
    moved = source.points
    dist, nn = nearest(moved)
    fitness = _capped_mse(dist, cap)
    history = [fitness]

    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        keep = dist <= cap
        if int(keep.sum()) < 3:
            raise RegistrationError(
                f"insufficient overlap: {int(keep.sum())} correspondences "
                f"within {cap} m at iteration {iterations}"
            )
        step = kabsch(moved[keep], target.points[nn[keep]])
        total = compose(step, total)

        moved = transform_points(total, source.points)
        dist, nn = nearest(moved)
        new_fitness = _capped_mse(dist, cap)
        history.append(new_fitness)

        step_size = max(
            rotation_angle(step.rotation), float(np.linalg.norm(step.translation))
        )
        rel_change = abs(fitness - new_fitness) / max(fitness, 1e-300)
        fitness = new_fitness
        if step_size < params.transform_epsilon or rel_change < params.fitness_epsilon:
            converged = True
            break

    return IcpResult(total, fitness, iterations, converged, tuple(history))


def _preprocess(clouds, leaf, sor):
    from .filters import statistical_outlier_removal, voxel_downsample

    out = []
    for cloud in clouds:
        if leaf is not None:
            cloud = voxel_downsample(cloud, leaf)
        if sor is not None:
            k, mult = sor
            cloud, _ = statistical_outlier_removal(cloud, k, mult)
        out.append(cloud)
    return out


def align_sequence(
    clouds,
    params: IcpParams = IcpParams(),
    strategy: str = "incremental",
    leaf: float | None = None,
    sor: tuple[int, float] | None = None,
) -> AlignmentReport:
    """Bring a sequence of overlapping clouds into the frame of the first.

    strategy "pairwise": each cloud is ICP-aligned to its predecessor and
    cumulative poses are chained. strategy "incremental": the concatenated
    model is aligned onto each new cloud and the cloud merged in, which
    resists drift at the cost of growing model size. Either way the
    report expresses every pose in the frame of the first cloud.

    ``leaf`` and ``sor`` optionally run voxel downsampling and statistical
    outlier removal on every cloud first; pass None to skip (e.g. when the
    caller already conditioned the clouds).
    """
    if len(clouds) < 2:
        raise ValueError(f"alignment needs at least 2 clouds, got {len(clouds)}")
    if strategy not in ("pairwise", "incremental"):
        raise ValueError(f"unknown strategy {strategy!r}")
    clouds = _preprocess(clouds, leaf, sor)

    transforms = [RigidTransform.identity()]
    fitness = []

    if strategy == "pairwise":
        for i in range(1, len(clouds)):
            try:
                result = icp(clouds[i], clouds[i - 1], params)
            except RegistrationError as exc:
                raise RegistrationError(f"pair {i - 1}->{i}: {exc}") from None
            transforms.append(compose(transforms[-1], result.transform))
            fitness.append(result.fitness)
        aligned = [
            apply_transform(tc, cloud) for tc, cloud in zip(transforms, clouds)
        ]
        merged = merge(aligned)
    else:
        # the growing model is re-posed into each new cloud's frame in
        # turn; successive frames differ by only one turntable step, so
        # every solve starts near identity no matter how far the table
        # has turned in total. The new cloud drives the correspondence
        # search so per-pair cost stays bounded as the model grows.
        #
        # Only the slice of the model near the new cloud can ever match
        # within the correspondence cap, so each solve sees the model
        # cropped to the cloud's bounding box grown by the cap; matches
        # and fitness are identical to using the full model.
        cap = params.max_correspondence_distance
        model = clouds[0]
        for i in range(1, len(clouds)):
            lo = clouds[i].points.min(axis=0) - cap
            hi = clouds[i].points.max(axis=0) + cap
            inside = np.all((model.points >= lo) & (model.points <= hi), axis=1)
            window = PointCloud(model.points[inside]) if inside.any() else model
            try:
                result = icp(clouds[i], window, params)
            except RegistrationError as exc:
                raise RegistrationError(f"pair {i - 1}->{i}: {exc}") from None
            step = result.transform
            transforms.append(compose(transforms[-1], step))
            model = merge([apply_transform(invert(step), model), clouds[i]])
            fitness.append(result.fitness)
        merged = merge(
            [apply_transform(tc, cloud) for tc, cloud in zip(transforms, clouds)]
        )

    return AlignmentReport(tuple(transforms), merged, tuple(fitness))


def transforms_to_text(transforms) -> str:
    """One transform per line: nine row-major rotation entries then t."""
    lines = []
    for t in transforms:
        vals = np.concatenate([t.rotation.reshape(-1), t.translation])
        lines.append(" ".join(f"{v:.17g}" for v in vals))
    return "\n".join(lines) + "\n"


def transforms_from_text(text: str) -> tuple[RigidTransform, ...]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        vals = np.array([float(v) for v in line.split()])
        if vals.shape != (12,):
            raise ValueError(f"line {lineno}: expected 12 numbers, got {len(vals)}")
        out.append(RigidTransform(vals[:9].reshape(3, 3), vals[9:]))
    return tuple(out)
