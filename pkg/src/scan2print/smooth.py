"""Moving least squares cloud smoothing and Laplacian mesh relaxation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, TriangleMesh
from .spatial import KdTree

log = logging.getLogger(__name__)

__all__ = ["MlsParams", "LaplacianParams", "mls_smooth", "laplacian_smooth"]


@dataclass(frozen=True)
class MlsParams:
    search_radius: float = 0.03
    polynomial_order: int = 2
    upsample: bool = False

    def __post_init__(self) -> None:
        if self.search_radius <= 0:
            raise ValueError("search_radius must be positive")
        if self.polynomial_order not in (1, 2, 3):
            raise ValueError("polynomial_order must be 1, 2 or 3")


@dataclass(frozen=True)
class LaplacianParams:
    iterations: int = 20
    relaxation: float = 0.1
    feature_angle: float = 45.0
    boundary_smoothing: bool = True

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must be in (0, 1]")
        if self.feature_angle <= 0:
            raise ValueError("feature_angle must be positive")


def _monomial_exponents(order: int) -> list[tuple[int, int]]:
    return [(a, b) for total in range(order + 1) for a in range(total, -1, -1) for b in [total - a]]


def _tangent_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def mls_smooth(cloud: PointCloud, params: MlsParams = MlsParams()) -> PointCloud:
    """Project every point onto a local weighted polynomial fit.

    Per point: gather neighbors within search_radius, fit a plane by
    Gaussian-weighted PCA, express neighbor heights over that plane,
    fit a bivariate polynomial by weighted least squares, then move the
    point onto the polynomial and take its normal from the gradient.

    Points whose neighborhoods are too small for the chosen order pass
    through untouched; their count is logged. With upsample on, four
    extra samples per well-fitted point are emitted on the polynomial at
    half-radius offsets, densifying thin or gappy regions.
    """
    if not cloud.has_normals:
        raise ValueError("mls_smooth needs input normals to orient its fits")
    r = params.search_radius
    order = params.polynomial_order
    exponents = _monomial_exponents(order)
    needed = len(exponents)  # (order+1)(order+2)/2

    tree = KdTree(cloud.points)

    new_points = cloud.points.copy()
    new_normals = cloud.normals.copy()
    extra_pts: list[np.ndarray] = []
    extra_nrm: list[np.ndarray] = []
    skipped = 0

    # neighborhoods are queried in chunks: dense merged clouds can hold
    # thousands of neighbors per point, so one query for every point at
    # once would dominate memory
    chunk = 8192
    for start in range(0, len(cloud), chunk):
        hoods = tree.radius_batch(cloud.points[start : start + chunk], r)
        for offset, hood in enumerate(hoods):
            i = start + offset
            if len(hood) < needed:
                skipped += 1
                continue
            p = cloud.points[i]
            nbrs = cloud.points[hood]
            diff = nbrs - p
            w = np.exp(-np.einsum("ij,ij->i", diff, diff) / (r * r))

            wsum = w.sum()
            centroid = (w[:, None] * nbrs).sum(axis=0) / wsum
            centered = nbrs - centroid
            cov = (w[:, None] * centered).T @ centered / wsum
            eigvals, eigvecs = np.linalg.eigh(cov)
            if eigvals[1] <= 1e-12 * max(eigvals[2], 1e-300):
                skipped += 1
                continue
            n = eigvecs[:, 0]
            if np.dot(n, cloud.normals[i]) < 0.0:
                n = -n

            # origin = query point projected onto the fitted plane
            origin = p - np.dot(p - centroid, n) * n
            u_hat, v_hat = _tangent_basis(n)
            local = nbrs - origin
            u = local @ u_hat
            v = local @ v_hat
            h = local @ n

            cols = [(u**a) * (v**b) for a, b in exponents]
            design = np.column_stack(cols)
            sw = np.sqrt(w)
            coeffs, *_ = np.linalg.lstsq(design * sw[:, None], h * sw, rcond=None)

            c00 = coeffs[exponents.index((0, 0))]
            c10 = coeffs[exponents.index((1, 0))]
            c01 = coeffs[exponents.index((0, 1))]
            new_points[i] = origin + c00 * n
            grad_normal = np.cross(u_hat + c10 * n, v_hat + c01 * n)
            grad_normal /= np.linalg.norm(grad_normal)
            if np.dot(grad_normal, cloud.normals[i]) < 0.0:
                grad_normal = -grad_normal
            new_normals[i] = grad_normal

            if params.upsample:
                half = r / 2.0
                for du, dv in ((half, 0.0), (-half, 0.0), (0.0, half), (0.0, -half)):
                    height = sum(
                        c * du**a * dv**b for c, (a, b) in zip(coeffs, exponents)
                    )
                    extra_pts.append(origin + du * u_hat + dv * v_hat + height * n)
                    gu = sum(a * c * du ** max(a - 1, 0) * dv**b for c, (a, b) in zip(coeffs, exponents) if a)
                    gv = sum(b * c * du**a * dv ** max(b - 1, 0) for c, (a, b) in zip(coeffs, exponents) if b)
                    gn = np.cross(u_hat + gu * n, v_hat + gv * n)
                    gn /= np.linalg.norm(gn)
                    if np.dot(gn, cloud.normals[i]) < 0.0:
                        gn = -gn
                    extra_nrm.append(gn)

    if skipped:
        log.warning("mls_smooth passed %d points through with too few neighbors", skipped)
    if extra_pts:
        new_points = np.vstack([new_points, extra_pts])
        new_normals = np.vstack([new_normals, extra_nrm])
    return PointCloud(new_points, new_normals)


def _directed_fb_neighbors(fb_edges: np.ndarray, n_vertices: int):
    """Map each vertex to its neighbors along feature/boundary edges."""
    src = np.concatenate([fb_edges[:, 0], fb_edges[:, 1]])
    dst = np.concatenate([fb_edges[:, 1], fb_edges[:, 0]])
    order = np.argsort(src, kind="stable")
    src, dst = src[order], dst[order]
    counts = np.bincount(src, minlength=n_vertices)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return counts, offsets, dst


def laplacian_smooth(mesh: TriangleMesh, params: LaplacianParams = LaplacianParams()) -> TriangleMesh:
    """Iteratively relax vertices toward their neighbor averages.

    Interior vertices take the uniform umbrella step. Vertices on a
    boundary or feature edge (dihedral above feature_angle) slide only
    along the edge path, and only where the path turns by less than
    feature_angle. Vertices where three or more such edges meet, or
    where an edge path dangles, stay fixed. Connectivity never changes.

    With boundary_smoothing off, boundary vertices are pinned entirely.
    """
    tris = mesh.triangles
    n = mesh.n_vertices
    cos_feature = np.cos(np.radians(params.feature_angle))

    edges_raw = tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    edges = np.sort(edges_raw, axis=1)
    uniq, inverse, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
    face_of = np.repeat(np.arange(len(tris)), 3)

    # the two faces across every interior edge, for dihedral tests
    interior = counts == 2
    order = np.argsort(inverse, kind="stable")
    sorted_faces = face_of[order]
    starts = np.concatenate([[0], np.cumsum(counts)])
    pair_rows = np.flatnonzero(interior)
    face_a = sorted_faces[starts[pair_rows]]
    face_b = sorted_faces[starts[pair_rows] + 1]

    boundary_edges = uniq[counts == 1]

    # symmetric one-ring adjacency over all unique edges
    ring_src = np.concatenate([uniq[:, 0], uniq[:, 1]])
    ring_dst = np.concatenate([uniq[:, 1], uniq[:, 0]])
    ring_count = np.bincount(ring_src, minlength=n).astype(np.float64)

    verts = mesh.vertices.copy()
    lam = params.relaxation

    for _ in range(params.iterations):
        fn = np.cross(
            verts[tris[:, 1]] - verts[tris[:, 0]],
            verts[tris[:, 2]] - verts[tris[:, 0]],
        )
        norms = np.linalg.norm(fn, axis=1, keepdims=True)
        fn = fn / np.maximum(norms, 1e-300)
        dihedral_cos = np.einsum("ij,ij->i", fn[face_a], fn[face_b])
        feature_edges = uniq[pair_rows[dihedral_cos < cos_feature]]

        fb = (
            np.vstack([boundary_edges, feature_edges])
            if len(feature_edges)
            else boundary_edges
        )
        fb_count = np.bincount(fb.ravel(), minlength=n)

        ring_sum = np.zeros((n, 3))
        np.add.at(ring_sum, ring_src, verts[ring_dst])
        umbrella = ring_sum / np.maximum(ring_count, 1.0)[:, None]

        new_verts = verts.copy()
        free = (fb_count == 0) & (ring_count > 0)
        new_verts[free] = (1.0 - lam) * verts[free] + lam * umbrella[free]

        on_path = np.flatnonzero(fb_count == 2)
        if len(on_path):
            cnts, offsets, dst = _directed_fb_neighbors(fb, n)
            a = verts[dst[offsets[on_path]]]
            b = verts[dst[offsets[on_path] + 1]]
            vcur = verts[on_path]
            d1 = vcur - a
            d2 = b - vcur
            l1 = np.linalg.norm(d1, axis=1)
            l2 = np.linalg.norm(d2, axis=1)
            denom = np.maximum(l1 * l2, 1e-300)
            turn_cos = np.einsum("ij,ij->i", d1, d2) / denom
            gentle = turn_cos > cos_feature
            move = on_path[gentle]
            new_verts[move] = (1.0 - lam) * vcur[gentle] + lam * 0.5 * (a + b)[gentle]

        if not params.boundary_smoothing and len(boundary_edges):
            pinned = np.unique(boundary_edges)
            new_verts[pinned] = verts[pinned]

        verts = new_verts

    return TriangleMesh(verts, tris)
