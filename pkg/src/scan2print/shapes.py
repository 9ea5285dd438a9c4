"""Synthetic ground truth geometry: primitive meshes and sampled clouds.

These generators feed the scan simulator and the test suite. Everything is
deterministic: meshes are built from fixed tables and samplers take explicit
seeds.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, TriangleMesh

# Unit box corner i has coordinate bits (i & 1, i >> 1 & 1, i >> 2 & 1).
_BOX_QUADS = (
    (0, 4, 6, 2),  # -x
    (1, 3, 7, 5),  # +x
    (0, 1, 5, 4),  # -y
    (2, 6, 7, 3),  # +y
    (0, 2, 3, 1),  # -z
    (4, 5, 7, 6),  # +z
)


def _split_quad(corners: np.ndarray, quad) -> list[tuple[int, int, int]]:
    # Diagonal through the lexicographically smallest corner so both boxes
    # sharing a rectangle triangulate it identically.
    keys = [tuple(corners[i]) for i in quad]
    s = min(range(4), key=lambda i: keys[i])
    q = quad[s:] + quad[:s]
    return [(q[0], q[1], q[2]), (q[0], q[2], q[3])]


def _box_mesh(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.column_stack(
        [
            [[lo[0], hi[0]][i & 1] for i in range(8)],
            [[lo[1], hi[1]][(i >> 1) & 1] for i in range(8)],
            [[lo[2], hi[2]][(i >> 2) & 1] for i in range(8)],
        ]
    )
    tris = []
    for quad in _BOX_QUADS:
        tris.extend(_split_quad(corners, quad))
    return corners, np.asarray(tris, dtype=np.int64)


def boxes_to_mesh(boxes) -> TriangleMesh:
    """Union a list of axis aligned boxes (lo, hi) into one exterior mesh.

    Boxes must tile the solid without partial face overlaps: any face shared
    by two boxes has to coincide exactly, so that the interior triangles
    cancel pairwise and only the outer surface remains.
    """
    all_verts = []
    all_tris = []
    offset = 0
    for lo, hi in boxes:
        v, t = _box_mesh(lo, hi)
        all_verts.append(v)
        all_tris.append(t + offset)
        offset += len(v)
    verts = np.concatenate(all_verts, axis=0)
    tris = np.concatenate(all_tris, axis=0)

    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    tris = inverse[tris]
    key = np.sort(tris, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    keep = first[counts == 1]
    keep.sort()
    return TriangleMesh(uniq, tris[keep])


def make_cube(size: float = 0.2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    return boxes_to_mesh([(c - h, c + h)])


def make_cube_with_notch(
    size: float = 0.25, notch: float = 0.1, center=(0.0, 0.0, 0.0)
) -> TriangleMesh:
    """A cube with one corner octant sized ``notch`` removed.

    The missing corner breaks every rotational symmetry of the cube, which
    makes the shape a good registration target: a rigid alignment of two
    views has exactly one optimum.
    """
    if not 0.0 < notch < size:
        raise ValueError("notch must lie strictly between 0 and size")
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    split = h - notch
    lows = [(-h, split)] * 3
    boxes = []
    for ix in range(2):
        for iy in range(2):
            for iz in range(2):
                if ix == iy == iz == 1:
                    continue  # the notch octant
                lo = np.array([lows[0][ix], lows[1][iy], lows[2][iz]])
                hi = np.array(
                    [split if ix == 0 else h, split if iy == 0 else h, split if iz == 0 else h]
                )
                boxes.append((c + lo, c + hi))
    return boxes_to_mesh(boxes)


_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array(
    [
        (-1, _GOLDEN, 0), (1, _GOLDEN, 0), (-1, -_GOLDEN, 0), (1, -_GOLDEN, 0),
        (0, -1, _GOLDEN), (0, 1, _GOLDEN), (0, -1, -_GOLDEN), (0, 1, -_GOLDEN),
        (_GOLDEN, 0, -1), (_GOLDEN, 0, 1), (-_GOLDEN, 0, -1), (-_GOLDEN, 0, 1),
    ],
    dtype=np.float64,
)

_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def make_icosphere(
    subdivisions: int = 3, radius: float = 0.1, center=(0.0, 0.0, 0.0)
) -> TriangleMesh:
    """Icosahedron subdivided ``subdivisions`` times, projected to a sphere."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be nonnegative")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]

    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = new_faces

    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


def make_torus(
    major_radius: float = 0.08,
    minor_radius: float = 0.03,
    n_major: int = 24,
    n_minor: int = 12,
) -> TriangleMesh:
    """Closed genus-1 mesh: a tube swept around a circle in the xz plane."""
    if minor_radius <= 0 or major_radius <= minor_radius:
        raise ValueError("need major_radius > minor_radius > 0")
    if n_major < 3 or n_minor < 3:
        raise ValueError("need at least 3 segments around each circle")

    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major_radius + minor_radius * np.cos(vv)
    verts = np.column_stack(
        [
            (ring * np.cos(uu)).ravel(),
            (minor_radius * np.sin(vv)).ravel(),
            (ring * np.sin(uu)).ravel(),
        ]
    )

    i = np.repeat(np.arange(n_major), n_minor)
    j = np.tile(np.arange(n_minor), n_major)
    a = i * n_minor + j
    b = ((i + 1) % n_major) * n_minor + j
    c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    d = i * n_minor + (j + 1) % n_minor
    tris = np.vstack(
        [np.column_stack([a, d, c]), np.column_stack([a, c, b])]
    )
    return TriangleMesh(verts, tris)


def make_dented_sphere(
    subdivisions: int = 3,
    radius: float = 0.1,
    center=(0.0, 0.0, 0.0),
    dent_direction=(1.0, 0.0, 0.3),
    dent_angle_deg: float = 35.0,
    dent_scale: float = 0.75,
) -> TriangleMesh:
    """Icosphere with one spherical cap pushed inward.

    The dent removes the rotational symmetry of the sphere while keeping the
    mesh closed and manifold, so it can anchor registration the way the
    notched cube does.
    """
    base = make_icosphere(subdivisions, radius, (0.0, 0.0, 0.0))
    d = np.asarray(dent_direction, dtype=np.float64)
    d /= np.linalg.norm(d)
    v = base.vertices.copy()
    radial = v / np.linalg.norm(v, axis=1, keepdims=True)
    cos_cap = np.cos(np.deg2rad(dent_angle_deg))
    t = radial @ d
    inside = t > cos_cap
    # Blend from full dent at the cap center to none at the rim.
    blend = np.zeros(len(v))
    blend[inside] = (t[inside] - cos_cap) / (1.0 - cos_cap)
    scale = 1.0 - (1.0 - dent_scale) * blend
    v *= scale[:, None]
    return TriangleMesh(v + np.asarray(center, dtype=np.float64), base.triangles)


def make_notched_icosphere(
    subdivisions: int = 4,
    radius: float = 0.1,
    center=(0.0, 0.0, 0.0),
    notch_direction=(0.45, -0.8, -0.4),
    notch_angle_deg: float = 55.0,
    notch_depth: float = 0.01,
) -> TriangleMesh:
    """Smooth icosphere with one large recessed planar cut.

    Vertices inside the notch cone are projected onto a plane notch_depth
    below the cap chord, leaving a flat floor behind a sharp rim wall. The
    cap is wide enough to swallow the upper pole, so the cut shows up in the
    silhouette from every turntable azimuth; a large single feature on an
    otherwise smooth ball is what lets sequential rigid alignment grip the
    rotation, where fine surface texture only aliases against itself.
    """
    if notch_depth < 0 or notch_depth >= radius:
        raise ValueError("notch_depth must lie in [0, radius)")
    if not 0.0 < notch_angle_deg < 90.0:
        raise ValueError("notch_angle_deg must lie strictly between 0 and 90")
    base = make_icosphere(subdivisions, radius, (0.0, 0.0, 0.0))
    d = np.asarray(notch_direction, dtype=np.float64)
    d /= np.linalg.norm(d)
    v = base.vertices.copy()
    s = v @ d
    rim = radius * np.cos(np.deg2rad(notch_angle_deg))
    inside = s > rim
    v[inside] -= np.outer(s[inside] - (rim - notch_depth), d)
    return TriangleMesh(v + np.asarray(center, dtype=np.float64), base.triangles)


def make_rect(
    width: float = 1.0, height: float = 1.0, z: float = 1.0, center_xy=(0.0, 0.0)
) -> TriangleMesh:
    """An axis aligned rectangle at constant z whose normal faces -z."""
    cx, cy = center_xy
    hw, hh = width / 2.0, height / 2.0
    v = np.array(
        [
            [cx - hw, cy - hh, z],
            [cx + hw, cy - hh, z],
            [cx + hw, cy + hh, z],
            [cx - hw, cy + hh, z],
        ]
    )
    # Winding chosen so the right hand rule normal points toward -z.
    t = np.array([[0, 2, 1], [0, 3, 2]], dtype=np.int64)
    return TriangleMesh(v, t)


def make_plane_grid(
    nx: int = 20, ny: int = 20, spacing: float = 0.005, z: float = 0.0
) -> PointCloud:
    """Regular nx by ny point grid in the z plane with +z normals."""
    xs = np.arange(nx) * spacing
    ys = np.arange(ny) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(nx * ny, z)])
    normals = np.tile([0.0, 0.0, 1.0], (nx * ny, 1))
    return PointCloud(pts, normals)


def sample_sphere(
    n: int, radius: float = 0.1, center=(0.0, 0.0, 0.0), seed: int = 0
) -> PointCloud:
    """Uniform random surface samples of a sphere with outward unit normals."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(v * radius + np.asarray(center, dtype=np.float64), v)


def fibonacci_sphere(n: int, radius: float = 0.1, center=(0.0, 0.0, 0.0)) -> PointCloud:
    """Nearly even deterministic sphere sampling (golden angle spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    v = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return PointCloud(v * radius + np.asarray(center, dtype=np.float64), v)


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Area weighted uniform samples on a mesh surface with facet normals."""
    v = mesh.vertices
    t = mesh.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    areas = np.linalg.norm(cross, axis=1) / 2.0
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has no surface area to sample")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(t), size=n, p=areas / total)
    u = rng.random(n)
    w = rng.random(n)
    flip = u + w > 1.0
    u[flip] = 1.0 - u[flip]
    w[flip] = 1.0 - w[flip]
    a = v[t[chosen, 0]]
    pts = a + u[:, None] * (v[t[chosen, 1]] - a) + w[:, None] * (v[t[chosen, 2]] - a)
    normals = cross[chosen] / np.linalg.norm(cross[chosen], axis=1, keepdims=True)
    return PointCloud(pts, normals)
