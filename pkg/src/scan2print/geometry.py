"""Core value types for the toolkit: point clouds, rigid transforms, triangle meshes.

All containers are immutable. Functions return new values, which keeps every
stage of the pipeline safe to run concurrently on independent inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

_ORTHO_TOL = 1e-9
_NORMAL_TOL = 1e-6


def _as_points(a, name: str) -> FloatArray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite (no NaN or Inf)")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with optional per-point unit normals."""

    points: FloatArray
    normals: FloatArray | None = None

    def __post_init__(self) -> None:
        pts = _as_points(self.points, "points")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if nrm.shape != pts.shape:
                raise ValueError(
                    f"normals shape {nrm.shape} does not match points shape {pts.shape}"
                )
            if nrm.size:
                lengths = np.linalg.norm(nrm, axis=1)
                if np.abs(lengths - 1.0).max() > _NORMAL_TOL:
                    raise ValueError("normals must be unit length within 1e-6")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


def _check_rotation(r: FloatArray) -> None:
    drift = np.abs(r.T @ r - np.eye(3)).max()
    if drift > _ORTHO_TOL:
        raise ValueError(f"rotation is not orthonormal (drift {drift:.3e})")
    if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
        raise ValueError("rotation must have determinant +1 (no reflections)")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation, applied as R @ x + t."""

    rotation: FloatArray
    translation: FloatArray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform entries must be finite")
        _check_rotation(r)
        r = np.ascontiguousarray(r)
        t = np.ascontiguousarray(t)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


def orthonormalized(r: FloatArray) -> FloatArray:
    """Project a nearly orthonormal matrix back onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    if np.linalg.det(u @ vt) < 0.0:
        u = u.copy()
        u[:, -1] *= -1.0
    return u @ vt


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return the transform equivalent to applying b first, then a.

    The rotation product is re-orthonormalized when numerical drift exceeds
    1e-9, so long chains of compositions stay valid rigid transforms.
    """
    r = a.rotation @ b.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
        r = orthonormalized(r)
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(r, t)


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform: compose(t, invert(t)) is the identity."""
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def transform_points(t: RigidTransform, points: FloatArray) -> FloatArray:
    """Apply a rigid transform to an (n, 3) array of points."""
    return np.asarray(points, dtype=np.float64) @ t.rotation.T + t.translation


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Transform a cloud, rotating (but not translating) its normals."""
    pts = transform_points(t, cloud.points)
    nrm = None
    if cloud.normals is not None:
        nrm = cloud.normals @ t.rotation.T
    return PointCloud(pts, nrm)


def merge(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds in order.

    Raises
    ------
    ValueError
        If the list is empty or the clouds disagree about having normals.
    """
    if not clouds:
        raise ValueError("merge requires at least one cloud")
    with_normals = [c.has_normals for c in clouds]
    if any(with_normals) and not all(with_normals):
        raise ValueError("cannot merge clouds with mixed normal presence")
    pts = np.concatenate([c.points for c in clouds], axis=0)
    nrm = None
    if all(with_normals):
        nrm = np.concatenate([c.normals for c in clouds], axis=0)
    return PointCloud(pts, nrm)


def rotation_x(angle: float) -> FloatArray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> FloatArray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> FloatArray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about_axis(axis, angle: float) -> FloatArray:
    """Rodrigues rotation matrix for a given axis (need not be unit) and angle."""
    a = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise ValueError("rotation axis must be nonzero")
    x, y, z = a / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_angle(r: FloatArray) -> float:
    """Rotation angle in radians recovered from a rotation matrix."""
    c = (np.trace(np.asarray(r, dtype=np.float64)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_about_point(axis, angle: float, pivot) -> RigidTransform:
    """Rigid rotation about an axis through an arbitrary pivot point."""
    r = rotation_about_axis(axis, angle)
    p = np.asarray(pivot, dtype=np.float64).reshape(3)
    return RigidTransform(r, p - r @ p)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh. Triangles store vertex indices, not coordinates."""

    vertices: FloatArray
    triangles: IntArray

    def __post_init__(self) -> None:
        verts = _as_points(self.vertices, "vertices")
        tris = np.asarray(self.triangles, dtype=np.int64)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must have shape (m, 3), got {tris.shape}")
        n = verts.shape[0]
        if tris.size:
            if tris.min() < 0 or tris.max() >= n:
                raise ValueError("triangle index out of range")
            if (
                (tris[:, 0] == tris[:, 1])
                | (tris[:, 1] == tris[:, 2])
                | (tris[:, 0] == tris[:, 2])
            ).any():
                raise ValueError("triangle references the same vertex twice")
            key = np.sort(tris, axis=1)
            uniq = np.unique(key, axis=0)
            if uniq.shape[0] != tris.shape[0]:
                raise ValueError("duplicated triangle (same three vertices)")
        tris = np.ascontiguousarray(tris)
        tris.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]
