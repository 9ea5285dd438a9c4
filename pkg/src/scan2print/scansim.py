"""Synthetic turntable scanner.

Replaces the physical rig: a serial-protocol turntable state machine, a
pinhole depth renderer over a ground-truth mesh, a depth noise model,
bilateral hole-closing filtering, and backprojection to point clouds.

Camera frame convention, used everywhere: +z along the optical axis,
+x right, +y down. The turntable axis is world +y through a
configurable pivot point; the camera stays fixed and the object spins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .geometry import (
    FloatArray,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    invert,
    rotation_about_point,
    transform_points,
)

log = logging.getLogger(__name__)

__all__ = [
    "CameraIntrinsics",
    "DepthImage",
    "TurntableState",
    "NoiseModel",
    "RenderedView",
    "turntable_command",
    "advance",
    "render_view",
    "render_depth",
    "add_noise",
    "bilateral_filter",
    "backproject",
    "simulate_scan",
    "write_pgm",
]

# the controller steps the motor in fixed firmware intervals
TURNTABLE_INTERVAL_SECONDS = 1.8
_TURNTABLE_AXIS = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 320
    height: int = 240
    fx: float = 280.0
    fy: float = 280.0
    cx: float = 160.0
    cy: float = 120.0
    depth_min: float = 0.15
    depth_max: float = 3.0

    def __post_init__(self) -> None:
        for name in ("width", "height", "fx", "fy", "cx", "cy", "depth_min", "depth_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.cx < self.width:
            raise ValueError("cx must be inside the image")
        if not self.cy < self.height:
            raise ValueError("cy must be inside the image")
        if not self.depth_min < self.depth_max:
            raise ValueError("need depth_min < depth_max")


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel depth in meters; 0 encodes "no return"."""

    values: FloatArray

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2:
            raise ValueError(f"depth image must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("depth image contains non-finite values")
        if (v < 0).any():
            raise ValueError("depth values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TurntableState:
    """Controller outputs plus accumulated table angle in degrees.

    Invariants: motor on implies green on and red off; motor off while
    not halted implies red on; halted implies motor and both LEDs off.
    The initial state is idle: motor off, red on.
    """

    motor: bool = False
    green_led: bool = False
    red_led: bool = True
    angle: float = 0.0
    halted: bool = False


@dataclass(frozen=True)
class NoiseModel:
    gaussian_sigma: float = 0.002
    edge_dropout_angle: float = 80.0
    specular_hole_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be nonnegative")
        if self.edge_dropout_angle < 0:
            raise ValueError("edge_dropout_angle must be nonnegative")
        if not 0.0 <= self.specular_hole_rate <= 1.0:
            raise ValueError("specular_hole_rate must be a probability")


def turntable_command(state: TurntableState, byte: str) -> TurntableState:
    """Apply one serial command; unknown bytes are ignored with a warning.

    '1' starts the motor (green on), '0' stops it (red on), '2' halts
    the controller with every output low, and 'reset' returns the table
    to its zero position and the idle state.
    """
    if byte == "1":
        return TurntableState(True, True, False, state.angle, False)
    if byte == "0":
        return TurntableState(False, False, True, state.angle, False)
    if byte == "2":
        return TurntableState(False, False, False, state.angle, True)
    if byte == "reset":
        return TurntableState(False, False, True, 0.0, False)
    log.warning("ignoring unknown turntable command %r", byte)
    return state


def advance(
    state: TurntableState, seconds: float, degrees_per_interval: float = 10.0
) -> TurntableState:
    """Let time pass: a running, non-halted table accumulates angle."""
    if seconds < 0:
        raise ValueError("seconds must be nonnegative")
    if state.motor and not state.halted:
        gained = seconds / TURNTABLE_INTERVAL_SECONDS * degrees_per_interval
        return replace(state, angle=state.angle + gained)
    return state


# ---------------------------------------------------------------------------
# rendering


class RenderedView(NamedTuple):
    depth: DepthImage
    normals: FloatArray  # (h, w, 3) facet normal per pixel, camera frame
    triangle_ids: np.ndarray  # (h, w) int, -1 where no hit


def _rasterize(verts: np.ndarray, tris: np.ndarray, cam: CameraIntrinsics):
    """Z-buffer the camera-frame mesh at pixel centers.

    Screen-space barycentric interpolation of 1/z gives the exact
    ray-triangle depth for planar triangles, so the result matches a
    ray caster to floating-point precision.
    """
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf)
    tri_id = np.full((h, w), -1, dtype=np.int64)
    if len(tris) == 0:
        return depth, tri_id

    z = verts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = verts[:, 0] / z * cam.fx + cam.cx
        v = verts[:, 1] / z * cam.fy + cam.cy

    for k, (i0, i1, i2) in enumerate(tris):
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= 1e-9 or z1 <= 1e-9 or z2 <= 1e-9:
            continue  # behind the camera; scenes never straddle the origin
        u0, u1, u2 = u[i0], u[i1], u[i2]
        v0, v1, v2 = v[i0], v[i1], v[i2]
        lo_u = max(int(np.ceil(min(u0, u1, u2))), 0)
        hi_u = min(int(np.floor(max(u0, u1, u2))), w - 1)
        lo_v = max(int(np.ceil(min(v0, v1, v2))), 0)
        hi_v = min(int(np.floor(max(v0, v1, v2))), h - 1)
        if lo_u > hi_u or lo_v > hi_v:
            continue

        denom = (v1 - v2) * (u0 - u2) + (u2 - u1) * (v0 - v2)
        if abs(denom) < 1e-12:
            continue
        uu = np.arange(lo_u, hi_u + 1)
        vv = np.arange(lo_v, hi_v + 1)
        pu, pv = np.meshgrid(uu, vv)
        l0 = ((v1 - v2) * (pu - u2) + (u2 - u1) * (pv - v2)) / denom
        l1 = ((v2 - v0) * (pu - u2) + (u0 - u2) * (pv - v2)) / denom
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        zpix = 1.0 / (l0 / z0 + l1 / z1 + l2 / z2)
        window = depth[lo_v : hi_v + 1, lo_u : hi_u + 1]
        better = inside & (zpix < window)
        window[better] = zpix[better]
        tri_id[lo_v : hi_v + 1, lo_u : hi_u + 1][better] = k
    return depth, tri_id


def render_view(
    ground_truth: TriangleMesh,
    object_angle: float,
    cam: CameraIntrinsics,
    cam_pose: RigidTransform | None = None,
    pivot=(0.0, 0.0, 0.0),
) -> RenderedView:
    """Depth plus per-pixel facet normals and triangle ids.

    The mesh is rotated by ``object_angle`` degrees about the vertical
    axis through ``pivot``; ``cam_pose`` maps camera coordinates to
    world coordinates (identity: camera at the origin looking along +z).
    Depths outside [depth_min, depth_max] and misses render as 0.
    """
    if cam_pose is None:
        cam_pose = RigidTransform.identity()
    spun = rotation_about_point(
        _TURNTABLE_AXIS, np.radians(object_angle), np.asarray(pivot, dtype=np.float64)
    )
    world = transform_points(spun, ground_truth.vertices)
    verts = transform_points(invert(cam_pose), world)

    raw, tri_id = _rasterize(verts, ground_truth.triangles, cam)
    ok = np.isfinite(raw) & (raw >= cam.depth_min) & (raw <= cam.depth_max)
    depth = np.where(ok, raw, 0.0)
    tri_id = np.where(ok, tri_id, -1)

    normals = np.zeros((cam.height, cam.width, 3))
    if ground_truth.n_triangles:
        t = ground_truth.triangles
        fn = np.cross(
            verts[t[:, 1]] - verts[t[:, 0]], verts[t[:, 2]] - verts[t[:, 0]]
        )
        lengths = np.linalg.norm(fn, axis=1, keepdims=True)
        fn = np.divide(fn, lengths, out=np.zeros_like(fn), where=lengths > 0)
        hit = tri_id >= 0
        normals[hit] = fn[tri_id[hit]]
    return RenderedView(DepthImage(depth), normals, tri_id)


def render_depth(
    ground_truth: TriangleMesh,
    object_angle: float,
    cam: CameraIntrinsics,
    cam_pose: RigidTransform | None = None,
    pivot=(0.0, 0.0, 0.0),
) -> DepthImage:
    """Depth image of the mesh posed at ``object_angle`` on the table."""
    return render_view(ground_truth, object_angle, cam, cam_pose, pivot).depth


# ---------------------------------------------------------------------------
# sensor noise and filtering


def add_noise(
    image: DepthImage,
    noise: NoiseModel,
    surface_normals: np.ndarray,
    seed,
    cam: CameraIntrinsics | None = None,
    specular_mask: np.ndarray | None = None,
) -> DepthImage:
    """Perturb a clean rendering the way the sensor would.

    Nonzero depths get Gaussian noise; pixels whose viewing-ray
    incidence angle reaches edge_dropout_angle are zeroed (grazing
    returns); pixels under ``specular_mask`` are zeroed with probability
    specular_hole_rate. With ``cam`` given, incidence uses the exact
    per-pixel ray; otherwise the optical axis approximates it.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    vals = image.values.copy()
    hit = vals > 0

    jitter = rng.normal(0.0, 1.0, size=vals.shape)
    vals[hit] += noise.gaussian_sigma * jitter[hit]

    h, w = vals.shape
    if cam is not None:
        uu, vv = np.meshgrid(np.arange(w), np.arange(h))
        rays = np.stack(
            [(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones((h, w))], axis=-1
        )
        rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    else:
        rays = np.broadcast_to([0.0, 0.0, 1.0], (h, w, 3))
    cos_inc = np.abs(np.einsum("hwc,hwc->hw", rays, surface_normals))
    incidence = np.degrees(np.arccos(np.clip(cos_inc, 0.0, 1.0)))
    vals[hit & (incidence >= noise.edge_dropout_angle)] = 0.0

    if specular_mask is not None and noise.specular_hole_rate > 0:
        holes = rng.uniform(size=vals.shape) < noise.specular_hole_rate
        vals[(vals > 0) & specular_mask & holes] = 0.0

    return DepthImage(np.maximum(vals, 0.0))


def bilateral_filter(
    image: DepthImage, sigma_space: float, sigma_depth: float
) -> DepthImage:
    """Edge-preserving smoothing over a (2*ceil(3*sigma_space)+1)^2 window.

    Zero pixels carry no weight and normally stay zero; a zero pixel
    whose window holds at least half its spatial weight in nonzero
    neighbors is treated as a small sensor hole and filled with their
    spatially weighted mean.
    """
    if sigma_space <= 0 or sigma_depth <= 0:
        raise ValueError("sigmas must be positive")
    r = int(np.ceil(3.0 * sigma_space))
    vals = image.values
    h, w = vals.shape
    padded = np.pad(vals, r)

    num = np.zeros((h, w))
    den = np.zeros((h, w))
    fill_num = np.zeros((h, w))
    fill_den = np.zeros((h, w))
    spatial_total = 0.0
    inv2ss = 1.0 / (2.0 * sigma_space**2)
    inv2sd = 1.0 / (2.0 * sigma_depth**2)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            w_sp = np.exp(-(dx * dx + dy * dy) * inv2ss)
            spatial_total += w_sp
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            nz = nb > 0
            w_full = w_sp * np.exp(-((nb - vals) ** 2) * inv2sd) * nz
            num += w_full * nb
            den += w_full
            fill_num += w_sp * nb * nz
            fill_den += w_sp * nz

    out = np.zeros((h, w))
    center = vals > 0
    out[center] = num[center] / den[center]
    holes = ~center & (fill_den >= 0.5 * spatial_total)
    out[holes] = fill_num[holes] / fill_den[holes]
    return DepthImage(out)


def backproject(image: DepthImage, cam: CameraIntrinsics) -> PointCloud:
    """Lift nonzero pixels to camera-frame 3D points, row-major order."""
    vv, uu = np.nonzero(image.values)
    z = image.values[vv, uu]
    x = (uu - cam.cx) * z / cam.fx
    y = (vv - cam.cy) * z / cam.fy
    return PointCloud(np.column_stack([x, y, z]))


# ---------------------------------------------------------------------------
# full acquisition


def simulate_scan(
    ground_truth: TriangleMesh,
    views: int,
    degrees_per_view: float,
    cam: CameraIntrinsics,
    noise: NoiseModel,
    seed: int,
    cam_pose: RigidTransform | None = None,
    pivot=(0.0, 0.0, 0.0),
    sigma_space: float | None = 2.0,
    sigma_depth: float = 0.01,
    specular_triangles: frozenset[int] = frozenset(),
    angle_jitter_deg: float = 0.0,
) -> tuple[list[PointCloud], list[RigidTransform]]:
    """Drive the turntable protocol and capture every view.

    Each cycle captures at the current table angle, then sends '1',
    waits one motor interval, and sends '0'; '2' halts the controller
    after the last cycle, leaving the table back at views *
    degrees_per_view. Per view the pipeline is render, noise, range
    gating, bilateral filter (skipped when ``sigma_space`` is None),
    backproject. Returns the clouds in the camera frame and the exact
    object pose (rotation about the pivot axis) used for each, which is
    i * degrees_per_view unless ``angle_jitter_deg`` adds per-view
    mechanical slop.

    Per-view randomness is seeded from (seed, view index), so any
    evaluation order, serial or parallel, produces identical output.
    """
    if views < 2:
        raise ValueError("views must be at least 2")
    pivot = np.asarray(pivot, dtype=np.float64)

    clouds: list[PointCloud] = []
    truths: list[RigidTransform] = []
    state = TurntableState()
    for i in range(views):
        rng = np.random.default_rng([seed, i])
        angle = state.angle
        if angle_jitter_deg > 0 and i > 0:
            angle += rng.normal(0.0, angle_jitter_deg)

        view = render_view(ground_truth, angle, cam, cam_pose, pivot)
        mask = None
        if specular_triangles:
            mask = np.isin(view.triangle_ids, list(specular_triangles))
        noisy = add_noise(view.depth, noise, view.normals, rng, cam=cam, specular_mask=mask)
        vals = noisy.values
        in_range = (vals >= cam.depth_min) & (vals <= cam.depth_max)
        gated = DepthImage(np.where(in_range, vals, 0.0))
        if sigma_space is not None:
            gated = bilateral_filter(gated, sigma_space, sigma_depth)
        clouds.append(backproject(gated, cam))
        truths.append(rotation_about_point(_TURNTABLE_AXIS, np.radians(angle), pivot))

        state = turntable_command(state, "1")
        state = advance(state, TURNTABLE_INTERVAL_SECONDS, degrees_per_view)
        state = turntable_command(state, "0")
    state = turntable_command(state, "2")
    log.info(
        "scan complete: %d views, table at %.1f degrees, halted=%s",
        views,
        state.angle,
        state.halted,
    )
    return clouds, truths


def write_pgm(image: DepthImage, path=None) -> bytes:
    """16-bit PGM dump of the depth image in millimeters."""
    mm = np.clip(np.round(image.values * 1000.0), 0, 65535).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n65535\n".encode("ascii")
    data = header + mm.tobytes()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data
