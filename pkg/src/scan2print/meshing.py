"""Surface reconstruction and mesh topology tools.

Two reconstruction paths: greedy triangulation keeps the input points as
vertices and adds short non-crossing edges (fast, can leave holes), and
grid projection extracts a continuous surface from a voxel vector field
(watertight on closed, well-sampled objects). Both feed the same audit,
boundary-loop, and hole-filling machinery.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import PointCloud, TriangleMesh
from .spatial import KdTree

log = logging.getLogger(__name__)

__all__ = [
    "GreedyParams",
    "GridParams",
    "BoundaryLoop",
    "MeshAudit",
    "MeshTopologyError",
    "greedy_triangulation",
    "grid_projection",
    "boundary_loops",
    "fill_holes",
    "mesh_audit",
]


class MeshTopologyError(RuntimeError):
    """The mesh violates a topological precondition (e.g. non-manifold)."""


@dataclass(frozen=True)
class GreedyParams:
    mu: float = 5.0
    max_nearest_neighbors: int = 50
    search_radius: float = 0.025
    min_angle: float = 10.0
    max_angle: float = 120.0
    max_surface_angle: float = 45.0

    def __post_init__(self) -> None:
        if self.mu < 1.0:
            raise ValueError("mu must be at least 1")
        if self.max_nearest_neighbors < 3:
            raise ValueError("max_nearest_neighbors must be at least 3")
        if self.search_radius <= 0:
            raise ValueError("search_radius must be positive")
        if not 0.0 < self.min_angle < self.max_angle < 180.0:
            raise ValueError("need 0 < min_angle < max_angle < 180")
        if self.max_surface_angle <= 0:
            raise ValueError("max_surface_angle must be positive")


@dataclass(frozen=True)
class GridParams:
    resolution: float = 0.0025
    padding: int = 3

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.padding < 1:
            raise ValueError("padding must be at least 1")


@dataclass(frozen=True)
class BoundaryLoop:
    """Closed cycle of boundary-edge vertices, in triangle-winding order."""

    vertices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class MeshAudit:
    boundary_edges: int
    non_manifold_edges: int
    euler_characteristic: int
    components: int


# ---------------------------------------------------------------------------
# greedy triangulation


def _tangent_frame(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


def _candidate_edges(cloud: PointCloud, p: GreedyParams) -> np.ndarray:
    """Unique (i, j) pairs passing distance and normal-compatibility gates."""
    pts = cloud.points
    tree = KdTree(pts)
    k = min(p.max_nearest_neighbors + 1, len(pts))
    dist, nn = tree.query_batch(pts, k)
    d0 = dist[:, 1]  # nearest real neighbor
    limit = np.minimum(p.mu * d0, p.search_radius)

    src = np.repeat(np.arange(len(pts)), k - 1)
    dst = nn[:, 1:].ravel()
    d = dist[:, 1:].ravel()
    ok = d <= limit[src]
    src, dst = src[ok], dst[ok]

    cos_max = np.cos(np.radians(p.max_surface_angle))
    compat = np.einsum("ij,ij->i", cloud.normals[src], cloud.normals[dst]) >= cos_max
    src, dst = src[compat], dst[compat]

    pairs = np.sort(np.column_stack([src, dst]), axis=1)
    return np.unique(pairs, axis=0)


def _edge_frames(cloud: PointCloud, edges: np.ndarray) -> np.ndarray:
    """Per-edge orthonormal basis (u, v, plane normal), shape (n, 3, 3)."""
    nrm = cloud.normals
    pn = nrm[edges[:, 0]] + nrm[edges[:, 1]]
    mag = np.linalg.norm(pn, axis=1)
    tiny = mag < 1e-9
    pn[tiny] = nrm[edges[tiny, 0]]
    pn /= np.linalg.norm(pn, axis=1, keepdims=True)

    ref = np.zeros_like(pn)
    use_x = np.abs(pn[:, 0]) < 0.9
    ref[use_x, 0] = 1.0
    ref[~use_x, 1] = 1.0
    e1 = np.cross(pn, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(pn, e1)
    return np.stack([e1, e2, pn], axis=1)


def _pair_conflicts(
    pts: np.ndarray,
    edges: np.ndarray,
    frames: np.ndarray,
    cand: np.ndarray,
    other: np.ndarray,
    radius: float,
) -> np.ndarray:
    """True where the existing edge `other` blocks the candidate `cand`.

    A block is a proper crossing, or a positive-length collinear
    overlap, in the candidate's projection plane; edges far from that
    plane (either endpoint above radius/2) are ignored. The collinear
    branch also fires on edges sharing an endpoint, which rejects a long
    edge running straight through an already-connected vertex.
    """
    out = np.zeros(len(cand), dtype=bool)
    chunk = 500_000
    for s in range(0, len(cand), chunk):
        cs = cand[s : s + chunk]
        os_ = other[s : s + chunk]
        a = pts[edges[cs, 0]]
        b = pts[edges[cs, 1]]
        mid = (a + b) / 2.0
        F = frames[cs]

        ends = np.stack([pts[edges[os_, 0]], pts[edges[os_, 1]]], axis=1) - mid[:, None, :]
        local = np.einsum("nij,nkj->nki", F, ends)  # (n, 2, 3)
        slab = np.abs(local[:, :, 2]).max(axis=1) <= radius / 2.0

        half = np.einsum("nij,nj->ni", F[:, :2, :], (b - a) / 2.0)
        a2 = -half
        b2 = half
        c2 = local[:, 0, :2]
        d2 = local[:, 1, :2]
        ab = b2 - a2

        def cross2(u, v):
            return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

        cd = d2 - c2
        d1 = cross2(cd, a2 - c2)
        d2_ = cross2(cd, b2 - c2)
        d3 = cross2(ab, c2 - a2)
        d4 = cross2(ab, d2 - a2)

        shares = (
            (edges[os_, 0] == edges[cs, 0])
            | (edges[os_, 0] == edges[cs, 1])
            | (edges[os_, 1] == edges[cs, 0])
            | (edges[os_, 1] == edges[cs, 1])
        )
        res = slab & (d1 * d2_ < 0) & (d3 * d4 < 0) & ~shares

        # collinear overlap: orientation tests vanish and the 1D shadows
        # overlap in more than a point (edges running through vertices)
        scale = np.einsum("ni,ni->n", ab, ab)
        tol = 1e-12 * np.maximum(scale, 1e-30)
        flat = slab & ~res & (
            (np.abs(d1) <= tol)
            & (np.abs(d2_) <= tol)
            & (np.abs(d3) <= tol)
            & (np.abs(d4) <= tol)
        )
        fl = np.flatnonzero(flat)
        if len(fl):
            axis = ab[fl] / np.maximum(np.sqrt(scale[fl]), 1e-300)[:, None]
            t_a = np.einsum("ni,ni->n", a2[fl], axis)
            t_b = np.einsum("ni,ni->n", b2[fl], axis)
            lo_ab = np.minimum(t_a, t_b)
            hi_ab = np.maximum(t_a, t_b)
            t_c = np.einsum("ni,ni->n", c2[fl], axis)
            t_d = np.einsum("ni,ni->n", d2[fl], axis)
            overlap = np.minimum(np.maximum(t_c, t_d), hi_ab) - np.maximum(
                np.minimum(t_c, t_d), lo_ab
            )
            res[fl] |= overlap > tol[fl]

        out[s : s + chunk] = res
    return out


def _accept_edges(cloud: PointCloud, edges: np.ndarray, radius: float) -> np.ndarray:
    """Greedy shortest-first pass rejecting crossings and overlaps.

    Candidates are processed in length order (ties by index pair) in
    batched rounds: each round is first screened against the accepted
    set in one vectorized pass, then the few conflicts among the round's
    own edges are resolved sequentially. The outcome matches a purely
    sequential scan because a rejected edge can never block a later one.
    Segments of length <= radius can only intersect if their midpoints
    are within radius of each other, so midpoint KD-trees find every
    pair worth testing.
    """
    from scipy.spatial import cKDTree

    pts = cloud.points
    lengths = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0], lengths))
    edges = edges[order]
    lengths = lengths[order]
    frames = _edge_frames(cloud, edges)
    mids = (pts[edges[:, 0]] + pts[edges[:, 1]]) / 2.0

    # two segments can only touch if their midpoints are within the mean
    # of their lengths; queries use the round's upper bound, then each
    # pair is trimmed to its exact limit before the heavy predicate
    def prune(cand, other, gap=None):
        if gap is None:
            gap = np.linalg.norm(mids[cand] - mids[other], axis=1)
        keep = gap <= (lengths[cand] + lengths[other]) / 2.0 * (1.0 + 1e-9)
        return cand[keep], other[keep]

    accepted: list[np.ndarray] = []
    n_accepted = 0
    batch = 4096
    for start in range(0, len(edges), batch):
        rows = np.arange(start, min(start + batch, len(edges)))
        reach = lengths[rows].max() * (1.0 + 1e-9)

        if n_accepted:
            acc_rows = np.concatenate(accepted)
            tree_acc = cKDTree(mids[acc_rows])
            dm = cKDTree(mids[rows]).sparse_distance_matrix(
                tree_acc, reach, output_type="ndarray"
            )
            cand, other = prune(rows[dm["i"]], acc_rows[dm["j"]], dm["v"])
            if len(cand):
                conf = _pair_conflicts(pts, edges, frames, cand, other, radius)
                rows = np.setdiff1d(rows, np.unique(cand[conf]), assume_unique=True)

        if len(rows) > 1:
            pairs = cKDTree(mids[rows]).query_pairs(reach, output_type="ndarray")
            if len(pairs):
                cand, other = prune(rows[pairs[:, 1]], rows[pairs[:, 0]])
                conf = _pair_conflicts(pts, edges, frames, cand, other, radius)
                inv = {r: p for p, r in enumerate(rows)}
                pairs = np.array(
                    [(inv[o], inv[c]) for c, o in zip(cand[conf], other[conf])],
                    dtype=np.int64,
                ).reshape(-1, 2)
            if len(pairs):
                # sequential resolution among the conflicting few: position
                # order equals length order, and only accepted edges block
                blockers: dict[int, list[int]] = defaultdict(list)
                for p0, p1 in pairs:
                    blockers[int(p1)].append(int(p0))
                ok = np.ones(len(rows), dtype=bool)
                for p1 in sorted(blockers):
                    ok[p1] = not any(ok[p0] for p0 in blockers[p1])
                rows = rows[ok]

        accepted.append(rows)
        n_accepted += len(rows)

    return edges[np.sort(np.concatenate(accepted))]


def _vertex_frames(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.zeros_like(normals)
    use_x = np.abs(normals[:, 0]) < 0.9
    ref[use_x, 0] = 1.0
    ref[~use_x, 1] = 1.0
    e1 = np.cross(normals, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return e1, np.cross(normals, e1)


def _trace_faces(cloud: PointCloud, edges: np.ndarray) -> np.ndarray:
    """Extract triangle faces from the accepted edge set.

    Neighbors of each vertex are ordered by angle in its tangent plane;
    following each directed edge to the clockwise-next neighbor walks
    face cycles. Length-3 cycles are the triangles; the long outer cycle
    of an open sheet and any dangling 2-cycles fall out naturally.
    """
    if len(edges) == 0:
        return np.empty((0, 3), dtype=np.int64)
    pts = cloud.points
    nrm = cloud.normals

    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    e1, e2 = _vertex_frames(nrm)
    d = pts[dst] - pts[src]
    ang = np.arctan2(
        np.einsum("ij,ij->i", d, e2[src]), np.einsum("ij,ij->i", d, e1[src])
    )
    order = np.lexsort((dst, ang, src))
    src = src[order]
    dst = dst[order]

    # ring extents per source vertex; each element is one directed edge
    starts_pos = np.flatnonzero(np.r_[True, src[1:] != src[:-1]])
    counts = np.diff(np.r_[starts_pos, len(src)])
    ring_start = dict(zip(src[starts_pos].tolist(), starts_pos.tolist()))
    ring_count = dict(zip(src[starts_pos].tolist(), counts.tolist()))
    elem_of = dict(zip(zip(src.tolist(), dst.tolist()), range(len(src))))

    seen = np.zeros(len(src), dtype=bool)
    cycles = []
    for e0 in range(len(src)):
        if seen[e0]:
            continue
        cycle = []
        e = e0
        while not seen[e]:
            seen[e] = True
            u = int(src[e])
            v = int(dst[e])
            cycle.append(u)
            s = ring_start[v]
            e = s + (elem_of[(v, u)] - s - 1) % ring_count[v]
        if len(cycle) == 3 and len(set(cycle)) == 3:
            cycles.append(cycle)

    if not cycles:
        return np.empty((0, 3), dtype=np.int64)
    tris = np.array(cycles, dtype=np.int64)
    fn = np.cross(
        pts[tris[:, 1]] - pts[tris[:, 0]], pts[tris[:, 2]] - pts[tris[:, 0]]
    )
    nsum = nrm[tris[:, 0]] + nrm[tris[:, 1]] + nrm[tris[:, 2]]
    # an isolated patch traces both sides; keep the winding that agrees
    # with the vertex normals
    agreeing = np.einsum("ij,ij->i", fn, nsum) >= 0
    triangles = {}
    for tri in tris[agreeing]:
        triangles.setdefault(tuple(sorted(tri)), tuple(tri))
    return np.array(sorted(triangles.values()), dtype=np.int64).reshape(-1, 3)


def _angle_filter(pts: np.ndarray, tris: np.ndarray, lo_deg: float, hi_deg: float) -> np.ndarray:
    if len(tris) == 0:
        return tris
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]

    def corner(v0, v1, v2):
        u = v1 - v0
        w = v2 - v0
        cosang = np.einsum("ij,ij->i", u, w) / np.maximum(
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1), 1e-300
        )
        return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))

    angs = np.stack([corner(a, b, c), corner(b, c, a), corner(c, a, b)])
    keep = np.all((angs >= lo_deg) & (angs <= hi_deg), axis=0)
    return tris[keep]


def greedy_triangulation(cloud: PointCloud, params: GreedyParams = GreedyParams()) -> TriangleMesh:
    """Mesh a cloud by greedily adding short non-crossing edges.

    Vertices are exactly the input points. Candidate edges are limited
    per point to the max_nearest_neighbors closest within search_radius
    and mu times the nearest-neighbor distance, with endpoint normals
    within max_surface_angle of each other. Edges are accepted shortest
    first unless they cross, or collinearly overlap, an accepted edge in
    the local projection plane. Triangles come from face-tracing the
    surviving edge graph, post-filtered to the [min_angle, max_angle]
    corner-angle window. The result may contain holes.
    """
    if not cloud.has_normals:
        raise ValueError("greedy_triangulation needs per-point normals")
    if len(cloud) < 3:
        raise ValueError(f"need at least 3 points, got {len(cloud)}")

    candidates = _candidate_edges(cloud, params)
    accepted = _accept_edges(cloud, candidates, params.search_radius)
    tris = _trace_faces(cloud, accepted)
    tris = _angle_filter(cloud.points, tris, params.min_angle, params.max_angle)
    return TriangleMesh(cloud.points, tris)


# ---------------------------------------------------------------------------
# grid projection


def grid_projection(cloud: PointCloud, params: GridParams = GridParams()) -> TriangleMesh:
    """Extract a continuous surface from a voxel vector field.

    Cell corners are valued by their offset to the nearest data points,
    signed by the point normals to tell inside from outside. Cell edges
    whose corner values oppose cross the surface; each cell owning a
    crossing gets one surface point (the mean of its edge crossings),
    and every crossing edge links its four surrounding cells into a
    quad, split into two triangles.
    """
    if not cloud.has_normals:
        raise ValueError("grid_projection needs per-point normals")
    if len(cloud) == 0:
        raise ValueError("grid_projection needs a non-empty cloud")
    res = params.resolution
    pad = params.padding

    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    if res > (hi - lo).max():
        raise ValueError(
            f"resolution {res} exceeds the cloud's bounding box extent {(hi - lo).max():.6g}"
        )

    origin = lo - pad * res
    dims = np.floor((hi - origin) / res).astype(np.int64) + 1 + pad
    if int(np.prod(dims)) > 200_000_000:
        raise ValueError(f"voxel grid {tuple(dims)} too large at resolution {res}")

    occupied = np.zeros(dims, dtype=bool)
    cell_of_pt = np.floor((cloud.points - origin) / res).astype(np.int64)
    occupied[tuple(cell_of_pt.T)] = True
    size = 2 * pad + 1
    active = ndimage.maximum_filter(occupied, size=size, mode="constant")

    # nodes = cell corners; a node is needed if any incident cell is active
    node_dims = dims + 1
    node_needed = np.zeros(node_dims, dtype=bool)
    for ox in (0, 1):
        for oy in (0, 1):
            for oz in (0, 1):
                node_needed[ox : ox + dims[0], oy : oy + dims[1], oz : oz + dims[2]] |= active

    idx = np.argwhere(node_needed)
    node_pos = origin + idx * res
    tree = KdTree(cloud.points)

    # signed offset from the corner to the local surface: Gaussian-blend
    # the nearest few points into a centroid and an averaged normal, then
    # project. Evaluating per-point tangent planes instead would let each
    # plane extrapolate past its own sample, and near creases that sprays
    # sign flips (fin sheets) through the padded shell; a single nearest
    # point is worse still, flickering across Voronoi boundaries.
    k_blend = min(12, len(cloud))
    spacing_d, _ = tree.query_batch(cloud.points, 2)
    h = max(res, float(np.median(spacing_d[:, -1])))
    f_flat = np.empty(len(node_pos))
    d_flat = np.empty(len(node_pos))
    chunk = 200_000
    for start in range(0, len(node_pos), chunk):
        qp = node_pos[start : start + chunk]
        d, nn = tree.query_batch(qp, k_blend)
        w = np.exp(-0.5 * (d / h) ** 2)
        denom = w.sum(axis=1, keepdims=True)
        np.maximum(denom, 1e-300, out=denom)
        centroid = (w[:, :, None] * cloud.points[nn]).sum(axis=1) / denom
        avg_n = (w[:, :, None] * cloud.normals[nn]).sum(axis=1)
        norm = np.linalg.norm(avg_n, axis=1, keepdims=True)
        np.maximum(norm, 1e-300, out=norm)
        avg_n /= norm
        f_flat[start : start + chunk] = np.einsum(
            "ij,ij->i", qp - centroid, avg_n
        )
        d_flat[start : start + chunk] = d[:, 0]

    f = np.full(node_dims, np.nan)
    f[tuple(idx.T)] = f_flat
    inside = np.zeros(node_dims, dtype=bool)
    inside[tuple(idx.T)] = f_flat < 0.0
    # the blend extrapolates; far corners of the padded shell can pick
    # up stray sign flips near sharp features. Real crossings lie within
    # the dilation reach of the data, so gate edges on that distance
    # (the padding still gets to close sampling gaps).
    node_dist = np.full(node_dims, np.inf)
    node_dist[tuple(idx.T)] = d_flat
    gate = max(2.0 * h, (pad + 1) * res * np.sqrt(3.0))

    n_cells = int(np.prod(dims))
    surf_sum = np.zeros((n_cells, 3))
    surf_cnt = np.zeros(n_cells, dtype=np.int64)
    quad_cells = []
    quad_flip = []

    axes = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
    shifts = {0: (1, 0, 0), 1: (0, 1, 0), 2: (0, 0, 1)}
    for d, pa, pb in axes:
        s = shifts[d]
        base_ok = node_needed[: node_dims[0] - s[0], : node_dims[1] - s[1], : node_dims[2] - s[2]]
        tip_ok = node_needed[s[0] :, s[1] :, s[2] :]
        base_in = inside[: node_dims[0] - s[0], : node_dims[1] - s[1], : node_dims[2] - s[2]]
        tip_in = inside[s[0] :, s[1] :, s[2] :]
        base_d = node_dist[: node_dims[0] - s[0], : node_dims[1] - s[1], : node_dims[2] - s[2]]
        tip_d = node_dist[s[0] :, s[1] :, s[2] :]
        near = np.minimum(base_d, tip_d) <= gate
        crossing = base_ok & tip_ok & near & (base_in != tip_in)
        nodes = np.argwhere(crossing)
        if len(nodes) == 0:
            continue

        fa = f[tuple(nodes.T)]
        tip_nodes = nodes + s
        fb = f[tuple(tip_nodes.T)]
        t = fa / (fa - fb)
        cross_pos = origin + nodes * res
        cross_pos[:, d] += t * res

        # the four cells around this edge: back off one cell in each
        # perpendicular axis, cyclically, so the quad winds around it
        offsets = ((0, 0), (0, -1), (-1, -1), (-1, 0))
        ids = []
        valid = np.ones(len(nodes), dtype=bool)
        for oa, ob in offsets:
            cell = nodes.copy()
            cell[:, pa] += oa
            cell[:, pb] += ob
            in_grid = np.all((cell >= 0) & (cell < dims), axis=1)
            cell_active = np.zeros(len(nodes), dtype=bool)
            cc = cell[in_grid]
            cell_active[in_grid] = active[cc[:, 0], cc[:, 1], cc[:, 2]]
            valid &= cell_active
            flat = np.full(len(nodes), -1, dtype=np.int64)
            flat[in_grid] = np.ravel_multi_index(tuple(cc.T), dims)
            ids.append(flat)
            np.add.at(surf_sum, flat[cell_active], cross_pos[cell_active])
            np.add.at(surf_cnt, flat[cell_active], 1)

        quad = np.column_stack(ids)[valid]
        quad_cells.append(quad)
        # reverse where the edge base sits inside, so facets face outward
        quad_flip.append(fa[valid] < 0.0)

    if not quad_cells:
        raise ValueError("no surface crossings found; cloud too sparse for this resolution")

    has_surface = surf_cnt > 0
    cell_to_vertex = np.cumsum(has_surface) - 1
    vertices = surf_sum[has_surface] / surf_cnt[has_surface][:, None]

    tri_list = []
    for quads, flips in zip(quad_cells, quad_flip):
        q = cell_to_vertex[quads]
        q[flips] = q[flips, ::-1]
        tri_list.append(np.column_stack([q[:, 0], q[:, 1], q[:, 2]]))
        tri_list.append(np.column_stack([q[:, 0], q[:, 2], q[:, 3]]))
    triangles = np.vstack(tri_list)
    return TriangleMesh(vertices, triangles)


# ---------------------------------------------------------------------------
# topology: loops, filling, audit


def _edge_table(tris: np.ndarray):
    edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq, counts


def boundary_loops(mesh: TriangleMesh) -> list[BoundaryLoop]:
    """All closed cycles of edges used by exactly one triangle.

    Loops are reported by ascending lowest vertex; each starts at its
    lowest vertex and runs in the direction of the owning triangles'
    winding. Raises MeshTopologyError when any edge is shared by three
    or more triangles.
    """
    uniq, counts = _edge_table(mesh.triangles)
    bad = uniq[counts > 2]
    if len(bad):
        listing = ", ".join(f"({a}, {b})" for a, b in bad[:20])
        raise MeshTopologyError(f"{len(bad)} non-manifold edges: {listing}")

    boundary = {tuple(e) for e in uniq[counts == 1]}
    if not boundary:
        return []

    # directed boundary edges, in triangle order
    out_edges: dict[int, list[int]] = defaultdict(list)
    for tri in mesh.triangles:
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if (min(u, v), max(u, v)) in boundary:
                out_edges[int(u)].append(int(v))
    for lst in out_edges.values():
        lst.sort()

    loops = []
    used: set[tuple[int, int]] = set()
    for start in sorted(out_edges):
        for first in out_edges[start]:
            if (start, first) in used:
                continue
            cycle = [start]
            u, v = start, first
            while True:
                used.add((u, v))
                if v == start:
                    break
                cycle.append(v)
                nxt = next((w for w in out_edges[v] if (v, w) not in used), None)
                if nxt is None:
                    raise MeshTopologyError(
                        f"boundary does not close into loops near vertex {v}"
                    )
                u, v = v, nxt
            low = int(np.argmin(cycle))
            loops.append(BoundaryLoop(tuple(cycle[low:] + cycle[:low])))
    loops.sort(key=lambda lp: lp.vertices[0])
    return loops


def _best_fit_plane_axes(points: np.ndarray):
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[0], vt[1]


def _cross2(u: np.ndarray, v: np.ndarray) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _ear_clip(order: list[int], pts2: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple polygon given CCW 2D coordinates."""
    idx = list(range(len(order)))
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10 * len(order):
        guard += 1
        found = False
        for pos in range(len(idx)):
            i0 = idx[pos - 1]
            i1 = idx[pos]
            i2 = idx[(pos + 1) % len(idx)]
            a, b, c = pts2[i0], pts2[i1], pts2[i2]
            if _cross2(b - a, c - b) <= 0:
                continue  # reflex corner
            contains = False
            for other in idx:
                if other in (i0, i1, i2):
                    continue
                p = pts2[other]
                s1 = _cross2(b - a, p - a)
                s2 = _cross2(c - b, p - b)
                s3 = _cross2(a - c, p - c)
                if s1 >= 0 and s2 >= 0 and s3 >= 0:
                    contains = True
                    break
            if contains:
                continue
            tris.append((order[i0], order[i1], order[i2]))
            del idx[pos]
            found = True
            break
        if not found:
            break
    if len(idx) == 3:
        tris.append((order[idx[0]], order[idx[1]], order[idx[2]]))
        return tris
    # degenerate polygon; fall back to a fan (still no new vertex)
    return [(order[0], order[i], order[i + 1]) for i in range(1, len(order) - 1)]


def fill_holes(mesh: TriangleMesh, max_boundary_vertices: int = 200) -> TriangleMesh:
    """Close boundary loops with patches; larger loops stay open.

    Loops of up to 6 vertices are ear-clipped against their best-fit
    plane without adding vertices; longer loops (up to the cap) get a
    centroid vertex and a triangle fan, which avoids the skinny ears of
    long clipped polygons. Patch triangles wind opposite the boundary
    direction so they match the surrounding surface orientation.
    """
    loops = boundary_loops(mesh)
    if not loops:
        return mesh

    verts = [mesh.vertices]
    new_tris = []
    next_vertex = mesh.n_vertices
    left_open = 0
    for loop in loops:
        if len(loop) > max_boundary_vertices:
            left_open += 1
            continue
        rev = list(loop.vertices[::-1])
        if len(rev) <= 6:
            pts3 = mesh.vertices[rev]
            ax_u, ax_v = _best_fit_plane_axes(pts3)
            pts2 = np.column_stack([pts3 @ ax_u, pts3 @ ax_v])
            area2 = np.sum(
                pts2[:, 0] * np.roll(pts2[:, 1], -1) - np.roll(pts2[:, 0], -1) * pts2[:, 1]
            )
            if area2 < 0:
                pts2[:, 1] = -pts2[:, 1]
            new_tris.extend(_ear_clip(rev, pts2))
        else:
            centroid = mesh.vertices[rev].mean(axis=0)
            verts.append(centroid[None, :])
            for i in range(len(rev)):
                new_tris.append((next_vertex, rev[i], rev[(i + 1) % len(rev)]))
            next_vertex += 1

    if left_open:
        log.warning(
            "fill_holes left %d loops open (longer than %d vertices)",
            left_open,
            max_boundary_vertices,
        )
    if not new_tris:
        return mesh
    all_verts = np.vstack(verts)
    all_tris = np.vstack([mesh.triangles, np.array(new_tris, dtype=np.int64)])
    return TriangleMesh(all_verts, all_tris)


def mesh_audit(mesh: TriangleMesh) -> MeshAudit:
    """Boundary/non-manifold edge counts, Euler characteristic, components."""
    uniq, counts = _edge_table(mesh.triangles)
    boundary = int((counts == 1).sum())
    non_manifold = int((counts > 2).sum())
    euler = mesh.n_vertices - len(uniq) + mesh.n_triangles

    if len(uniq):
        graph = coo_matrix(
            (np.ones(len(uniq)), (uniq[:, 0], uniq[:, 1])),
            shape=(mesh.n_vertices, mesh.n_vertices),
        )
        n_comp, _ = connected_components(graph, directed=False)
    else:
        n_comp = mesh.n_vertices
    return MeshAudit(boundary, non_manifold, euler, int(n_comp))
