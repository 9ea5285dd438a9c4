"""PLY and STL serialization.

PLY covers clouds (optionally with normals) and triangle meshes in both ascii
and binary little endian encodings; coordinates are stored as 32 bit floats,
so a binary write followed by a read returns bit identical values. STL is the
binary flavor only: an 80 byte header, a uint32 triangle count, and fifty
bytes per facet with normals recomputed from the vertex winding.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriangleMesh

_VERTEX_PROPS = ("x", "y", "z", "nx", "ny", "nz")
_FLOAT_TYPES = {"float", "float32"}
_COUNT_TYPES = {"uchar", "uint8"}
_INDEX_TYPES = {"int", "int32", "uint", "uint32"}

_STL_RECORD = np.dtype(
    [("normal", "<f4", 3), ("v0", "<f4", 3), ("v1", "<f4", 3), ("v2", "<f4", 3), ("attr", "<u2")]
)
assert _STL_RECORD.itemsize == 50


class PlyParseError(ValueError):
    """Raised for malformed PLY input; carries the offending header/data line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StlParseError(ValueError):
    pass


def _read_source(source) -> bytes:
    if isinstance(source, bytes):
        return source
    return Path(source).read_bytes()


class _Header:
    def __init__(self) -> None:
        self.fmt = ""
        self.vertex_count = -1
        self.face_count = -1
        self.vertex_props: list[str] = []
        self.data_start = 0
        self.n_lines = 0


def _parse_header(data: bytes) -> _Header:
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("missing end_header")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyParseError("missing newline after end_header")
    h = _Header()
    h.data_start = nl + 1
    text = data[:end].decode("latin-1")
    lines = text.splitlines()
    h.n_lines = len(lines) + 1  # + end_header line

    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("file does not start with 'ply'", line=1)

    current = None  # element whose properties are being declared
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "format":
            if parts[1:] == ["ascii", "1.0"]:
                h.fmt = "ascii"
            elif parts[1:] == ["binary_little_endian", "1.0"]:
                h.fmt = "binary"
            else:
                raise PlyParseError(f"unsupported format {' '.join(parts[1:])!r}", line=lineno)
        elif key == "element":
            if len(parts) != 3:
                raise PlyParseError("malformed element declaration", line=lineno)
            name, count = parts[1], parts[2]
            try:
                n = int(count)
            except ValueError:
                raise PlyParseError(f"bad element count {count!r}", line=lineno) from None
            if n < 0:
                raise PlyParseError("negative element count", line=lineno)
            if name == "vertex":
                if h.vertex_count >= 0:
                    raise PlyParseError("duplicate vertex element", line=lineno)
                h.vertex_count = n
            elif name == "face":
                if h.face_count >= 0:
                    raise PlyParseError("duplicate face element", line=lineno)
                h.face_count = n
            else:
                raise PlyParseError(f"unsupported element {name!r}", line=lineno)
            current = name
        elif key == "property":
            if current == "vertex":
                if len(parts) != 3 or parts[1] not in _FLOAT_TYPES:
                    raise PlyParseError(
                        f"vertex properties must be 32 bit floats, got {line!r}", line=lineno
                    )
                name = parts[2]
                if name not in _VERTEX_PROPS:
                    raise PlyParseError(f"unsupported vertex property {name!r}", line=lineno)
                if name in h.vertex_props:
                    raise PlyParseError(f"duplicate vertex property {name!r}", line=lineno)
                h.vertex_props.append(name)
            elif current == "face":
                ok = (
                    len(parts) == 5
                    and parts[1] == "list"
                    and parts[2] in _COUNT_TYPES
                    and parts[3] in _INDEX_TYPES
                    and parts[4] in ("vertex_indices", "vertex_index")
                )
                if not ok:
                    raise PlyParseError(f"unsupported face property {line!r}", line=lineno)
            else:
                raise PlyParseError("property declared outside an element", line=lineno)
        else:
            raise PlyParseError(f"unknown header keyword {key!r}", line=lineno)

    if not h.fmt:
        raise PlyParseError("missing format declaration")
    if h.vertex_count < 0:
        raise PlyParseError("missing vertex element")
    for req in ("x", "y", "z"):
        if req not in h.vertex_props:
            raise PlyParseError(f"missing vertex property {req!r}")
    has_any = any(p in h.vertex_props for p in ("nx", "ny", "nz"))
    has_all = all(p in h.vertex_props for p in ("nx", "ny", "nz"))
    if has_any and not has_all:
        raise PlyParseError("normals require all of nx, ny, nz")
    return h


def _assemble(h: _Header, columns: dict[str, np.ndarray], faces: np.ndarray | None):
    pts = np.column_stack([columns["x"], columns["y"], columns["z"]]).astype(np.float64)
    normals = None
    if "nx" in h.vertex_props:
        normals = np.column_stack([columns["nx"], columns["ny"], columns["nz"]]).astype(np.float64)
    if faces is not None:
        if faces.size and (faces.min() < 0 or faces.max() >= h.vertex_count):
            bad = int(np.abs(faces).max())
            raise PlyParseError(f"face index {bad} out of range for {h.vertex_count} vertices")
        return TriangleMesh(pts, faces)
    return PointCloud(pts, normals)


def _read_ascii(data: bytes, h: _Header):
    body = data[h.data_start :].decode("latin-1").splitlines()
    rows = [(h.n_lines + i + 1, ln.strip()) for i, ln in enumerate(body)]
    rows = [(no, ln) for no, ln in rows if ln]
    want = h.vertex_count + max(h.face_count, 0)
    if len(rows) < want:
        raise PlyParseError(
            f"expected {want} data lines, found {len(rows)}", line=h.n_lines + len(body)
        )
    if len(rows) > want:
        raise PlyParseError("trailing data after declared elements", line=rows[want][0])

    nprops = len(h.vertex_props)
    verts = np.empty((h.vertex_count, nprops), dtype=np.float32)
    for i in range(h.vertex_count):
        lineno, ln = rows[i]
        toks = ln.split()
        if len(toks) != nprops:
            raise PlyParseError(
                f"expected {nprops} vertex values, got {len(toks)}", line=lineno
            )
        try:
            verts[i] = [float(t) for t in toks]
        except ValueError:
            raise PlyParseError(f"bad vertex value in {ln!r}", line=lineno) from None

    faces = None
    if h.face_count >= 0:
        faces = np.empty((h.face_count, 3), dtype=np.int64)
        for j in range(h.face_count):
            lineno, ln = rows[h.vertex_count + j]
            toks = ln.split()
            try:
                vals = [int(t) for t in toks]
            except ValueError:
                raise PlyParseError(f"bad face value in {ln!r}", line=lineno) from None
            if not vals or vals[0] != 3 or len(vals) != 4:
                raise PlyParseError("only triangular faces are supported", line=lineno)
            faces[j] = vals[1:]

    columns = {name: verts[:, i] for i, name in enumerate(h.vertex_props)}
    return _assemble(h, columns, faces)


def _read_binary(data: bytes, h: _Header):
    vdtype = np.dtype([(name, "<f4") for name in h.vertex_props])
    off = h.data_start
    vbytes = h.vertex_count * vdtype.itemsize
    if len(data) - off < vbytes:
        raise PlyParseError(
            f"vertex data truncated at byte {len(data)} (need {off + vbytes})"
        )
    vrec = np.frombuffer(data, dtype=vdtype, count=h.vertex_count, offset=off)
    off += vbytes

    faces = None
    if h.face_count >= 0:
        fdtype = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
        fbytes = h.face_count * fdtype.itemsize
        if len(data) - off < fbytes:
            raise PlyParseError(
                f"face data truncated at byte {len(data)} (need {off + fbytes})"
            )
        frec = np.frombuffer(data, dtype=fdtype, count=h.face_count, offset=off)
        bad = np.nonzero(frec["n"] != 3)[0]
        if bad.size:
            raise PlyParseError(
                f"face record {int(bad[0])}: only triangular faces are supported"
            )
        faces = frec["idx"].astype(np.int64)
        off += fbytes

    if off != len(data):
        raise PlyParseError(f"trailing data after declared elements (byte {off})")
    columns = {name: vrec[name] for name in h.vertex_props}
    return _assemble(h, columns, faces)


def read_ply(source) -> PointCloud | TriangleMesh:
    """Parse PLY bytes or a file path into a cloud or mesh.

    Raises
    ------
    PlyParseError
        On malformed headers, element count mismatches, non triangular
        faces, or face indices out of range.
    """
    data = _read_source(source)
    h = _parse_header(data)
    if h.fmt == "ascii":
        return _read_ascii(data, h)
    return _read_binary(data, h)


def _f32_text(v: np.float32) -> str:
    return f"{float(v):.9g}"


def write_ply(obj, path=None, binary: bool = True) -> bytes:
    """Serialize a PointCloud or TriangleMesh to PLY, optionally writing a file."""
    if isinstance(obj, PointCloud):
        pts = obj.points.astype(np.float32)
        normals = None if obj.normals is None else obj.normals.astype(np.float32)
        faces = None
    elif isinstance(obj, TriangleMesh):
        pts = obj.vertices.astype(np.float32)
        normals = None
        faces = obj.triangles
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} as PLY")

    props = ["x", "y", "z"] + (["nx", "ny", "nz"] if normals is not None else [])
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(pts)}")
    header.extend(f"property float {p}" for p in props)
    if faces is not None:
        header.append(f"element face {len(faces)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")
    out = bytearray(("\n".join(header) + "\n").encode("ascii"))

    cols = np.hstack([pts, normals]) if normals is not None else pts
    if binary:
        vrec = np.ascontiguousarray(cols, dtype="<f4")
        out += vrec.tobytes()
        if faces is not None:
            fdtype = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
            frec = np.empty(len(faces), dtype=fdtype)
            frec["n"] = 3
            frec["idx"] = faces
            out += frec.tobytes()
    else:
        for row in cols:
            out += (" ".join(_f32_text(v) for v in row) + "\n").encode("ascii")
        if faces is not None:
            for tri in faces:
                out += f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode("ascii")

    blob = bytes(out)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def facet_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit facet normals by the right hand rule; zero for degenerate facets."""
    v = mesh.vertices
    t = mesh.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    lengths = np.linalg.norm(n, axis=1, keepdims=True)
    safe = np.where(lengths > 0.0, lengths, 1.0)
    return np.where(lengths > 0.0, n / safe, 0.0)


def write_stl(mesh: TriangleMesh, path=None) -> bytes:
    """Serialize a mesh as binary STL (84 + 50 * n_triangles bytes)."""
    if not isinstance(mesh, TriangleMesh):
        raise TypeError("write_stl expects a TriangleMesh")
    header = b"scan2print binary stl".ljust(80, b" ")
    rec = np.empty(mesh.n_triangles, dtype=_STL_RECORD)
    rec["normal"] = facet_normals(mesh).astype(np.float32)
    v = mesh.vertices
    t = mesh.triangles
    rec["v0"] = v[t[:, 0]].astype(np.float32)
    rec["v1"] = v[t[:, 1]].astype(np.float32)
    rec["v2"] = v[t[:, 2]].astype(np.float32)
    rec["attr"] = 0
    blob = header + np.uint32(mesh.n_triangles).tobytes() + rec.tobytes()
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def read_stl(source) -> TriangleMesh:
    """Parse binary STL into a mesh, welding exactly coincident vertices."""
    data = _read_source(source)
    if len(data) < 84:
        raise StlParseError("file shorter than a binary STL header")
    count = int(np.frombuffer(data, dtype="<u4", count=1, offset=80)[0])
    expect = 84 + 50 * count
    if len(data) != expect:
        raise StlParseError(
            f"size {len(data)} does not match {count} triangles "
            f"(expected {expect}; note that ascii STL is not supported)"
        )
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    corners = np.stack([rec["v0"], rec["v1"], rec["v2"]], axis=1).astype(np.float64)
    flat = corners.reshape(-1, 3)
    verts, inverse = np.unique(flat, axis=0, return_inverse=True)
    tris = inverse.reshape(-1, 3).astype(np.int64)
    return TriangleMesh(verts, tris)
