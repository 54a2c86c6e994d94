"""Triangle meshes, OBJ/PLY file I/O, and discrete surface geometry.

A mesh is a vertex array of shape ``(N, 3)`` together with an oriented face
index array of shape ``(M, 3)``.  Vertex fields (tangent vectors to the mesh,
one 3-vector per vertex) are plain ``(N, 3)`` float arrays aligned with the
vertex list.

Conventions used throughout the package:

* face areas are true triangle areas, ``area = 0.5 * |e01 x e02|``;
* vertex volumes distribute one third of each incident face area;
* the mesh Laplacian uses the cotangent formula,
  ``(L h)_i = sum_j (cot a_ij + cot b_ij) (h_i - h_j)``, with boundary edges
  contributing their single available cotangent and no clamping of negative
  cotangents.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sparse


class MeshError(ValueError):
    """Invalid mesh data."""


class MeshParseError(MeshError):
    """A mesh file could not be parsed."""


class DegenerateFaceError(MeshError):
    """A face with (numerically) vanishing area.

    Attributes
    ----------
    face_index : int | None
        Index of the offending face, when known.
    """

    def __init__(self, message, face_index=None):
        if face_index is not None:
            message = f"{message} (face {face_index})"
        super().__init__(message)
        self.face_index = face_index


class TriangleMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like
        ``(N, 3)`` float coordinates.
    faces : array_like
        ``(M, 3)`` integer indices into the vertex list.  The stored order
        defines the face orientation; no global consistency is enforced.
    validate : bool
        Check the structural invariants (index range, distinct corners,
        strictly positive face areas).  On by default.
    """

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces, validate=True):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (M, 3), got {f.shape}")
        if validate:
            _validate(v, f)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def __setattr__(self, name, value):
        raise AttributeError("TriangleMesh is immutable")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def with_vertices(self, vertices, validate=True):
        """Same topology, new vertex positions."""
        return TriangleMesh(vertices, self.faces, validate=validate)

    def same_topology(self, other):
        return (
            self.n_vertices == other.n_vertices
            and self.faces.shape == other.faces.shape
            and bool(np.array_equal(self.faces, other.faces))
        )

    def __repr__(self):
        return f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def _validate(v, f):
    n = v.shape[0]
    if not np.all(np.isfinite(v)):
        raise MeshError("non-finite vertex coordinates")
    if f.size:
        if f.min() < 0 or f.max() >= n:
            raise MeshError("face index out of range")
        same = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if same.any():
            raise DegenerateFaceError(
                "degenerate face: repeated vertex index", int(np.flatnonzero(same)[0])
            )
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        area2 = np.einsum("ij,ij->i", cross, cross)
        bad = area2 <= 0.0
        if bad.any():
            raise DegenerateFaceError("zero-area face", int(np.flatnonzero(bad)[0]))


@dataclass(frozen=True)
class FaceFrames:
    """Per-face first-order geometry, stacked over all M faces.

    Attributes
    ----------
    dq : ndarray, (M, 3, 2)
        Edge matrix ``[v1 - v0, v2 - v0]`` per face.
    g : ndarray, (M, 2, 2)
        First fundamental form ``dq^T dq``.
    n : ndarray, (M, 3)
        Unit face normals ``(e01 x e02) / |e01 x e02|``.
    area : ndarray, (M,)
        True triangle areas.
    """

    dq: np.ndarray
    g: np.ndarray
    n: np.ndarray
    area: np.ndarray

    def __len__(self):
        return self.area.shape[0]


@dataclass(frozen=True)
class FaceSamples:
    """Per-face (barycenter, unit normal, area) samples."""

    centers: np.ndarray
    normals: np.ndarray
    areas: np.ndarray

    def __len__(self):
        return self.areas.shape[0]


def face_corners(mesh):
    """Gathered corner positions ``(v0, v1, v2)``, each ``(M, 3)``."""
    v, f = mesh.vertices, mesh.faces
    return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


def face_areas(mesh):
    """True triangle areas, ``0.5 * |e01 x e02|`` per face."""
    v0, v1, v2 = face_corners(mesh)
    cross = np.cross(v1 - v0, v2 - v0)
    return 0.5 * np.linalg.norm(cross, axis=1)


def vertex_volumes(mesh, areas=None):
    """Vertex volume weights: one third of the incident face areas.

    The total vertex volume equals the total surface area.  Isolated
    vertices get volume zero.
    """
    if areas is None:
        areas = face_areas(mesh)
    vol = np.zeros(mesh.n_vertices)
    share = areas / 3.0
    for k in range(3):
        np.add.at(vol, mesh.faces[:, k], share)
    return vol


def face_frames(mesh):
    """Edge matrices, fundamental forms, unit normals and areas per face."""
    v0, v1, v2 = face_corners(mesh)
    e1 = v1 - v0
    e2 = v2 - v0
    dq = np.stack([e1, e2], axis=2)
    g = np.einsum("mia,mib->mab", dq, dq)
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1)
    if np.any(norm <= 0.0):
        raise DegenerateFaceError("zero-area face", int(np.flatnonzero(norm <= 0.0)[0]))
    n = cross / norm[:, None]
    return FaceFrames(dq=dq, g=g, n=n, area=0.5 * norm)


def face_samples(mesh):
    """Barycenters, unit normals and areas per face (varifold atoms)."""
    v0, v1, v2 = face_corners(mesh)
    centers = (v0 + v1 + v2) / 3.0
    cross = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(cross, axis=1)
    if np.any(norm <= 0.0):
        raise DegenerateFaceError("zero-area face", int(np.flatnonzero(norm <= 0.0)[0]))
    return FaceSamples(centers=centers, normals=cross / norm[:, None], areas=0.5 * norm)


def face_cotangents(mesh):
    """Cotangents of the three interior angles per face.

    Column ``k`` holds the cotangent of the angle at corner ``k``; the angle
    at a corner is opposite the edge joining the other two corners.  Negative
    cotangents of obtuse angles are kept as-is.
    """
    v0, v1, v2 = face_corners(mesh)
    e1 = v1 - v0
    e2 = v2 - v0
    s = np.linalg.norm(np.cross(e1, e2), axis=1)
    if np.any(s <= 0.0):
        raise DegenerateFaceError("zero-area face", int(np.flatnonzero(s <= 0.0)[0]))
    cot0 = np.einsum("ij,ij->i", e1, e2) / s
    cot1 = np.einsum("ij,ij->i", e1, e1 - e2) / s
    cot2 = np.einsum("ij,ij->i", e2, e2 - e1) / s
    return np.stack([cot0, cot1, cot2], axis=1)


# corner k of a face is opposite the edge (other[k][0], other[k][1])
_OPPOSITE = ((1, 2), (2, 0), (0, 1))


def cotan_laplacian(mesh):
    """Sparse cotangent Laplacian ``L`` with ``(L h)_i = sum_j w_ij (h_i - h_j)``.

    ``w_ij`` sums the cotangents of the angles opposite the edge ``(i, j)``
    in its incident faces; boundary edges have a single incident face and
    contribute one cotangent.
    """
    f = mesh.faces
    cots = face_cotangents(mesh)
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for corner, (a, b) in enumerate(_OPPOSITE):
        i, j, w = f[:, a], f[:, b], cots[:, corner]
        rows.extend([i, j, i, j])
        cols.extend([j, i, i, j])
        vals.extend([-w, -w, w, w])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def cotan_laplacian_apply(mesh, h, laplacian=None):
    """Apply the cotangent Laplacian to a vertex field.

    Parameters
    ----------
    h : ndarray, (N, 3)
        Vertex field aligned with the mesh.
    laplacian : sparse matrix, optional
        A precomputed matrix from :func:`cotan_laplacian`.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (mesh.n_vertices, 3):
        raise MeshError(f"field shape {h.shape} does not match mesh ({mesh.n_vertices}, 3)")
    L = cotan_laplacian(mesh) if laplacian is None else laplacian
    return L @ h


def mesh_edges(mesh):
    """Unique undirected edges as an ``(E, 2)`` sorted-index array."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def mesh_diameter(mesh):
    """Exact diameter of the vertex set (max pairwise distance).

    Uses the convex hull to prune candidates; falls back to the brute-force
    pairwise maximum for tiny or degenerate inputs.
    """
    pts = mesh.vertices
    if pts.shape[0] > 16:
        try:
            from scipy.spatial import ConvexHull

            pts = pts[ConvexHull(pts).vertices]
        except Exception:
            pass
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).max()))


def normalize_unit_diameter(mesh):
    """Rescale (about the origin) so the vertex-set diameter is 1.

    Returns
    -------
    (TriangleMesh, float)
        Rescaled mesh and the scale factor that was divided out.
    """
    d = mesh_diameter(mesh)
    if d <= 0.0:
        raise MeshError("cannot normalize: zero diameter")
    return mesh.with_vertices(mesh.vertices / d), d


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def load_mesh(path, format=None):
    """Load a triangle mesh from an OBJ or PLY file.

    PLY may be ASCII or binary little-endian; OBJ must be ASCII (normals and
    texture coordinates are ignored).  Faces with more or fewer than three
    vertices are rejected.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        vertices, faces = _read_obj(path)
    elif fmt == "ply":
        vertices, faces = _read_ply(path)
    else:
        raise MeshParseError(f"unsupported mesh format: {fmt!r}")
    try:
        return TriangleMesh(vertices, faces)
    except MeshError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_mesh(mesh, path, format=None, binary=False):
    """Write a mesh as OBJ or PLY.

    ASCII output uses ``repr`` floats, which round-trip exactly; binary PLY
    stores little-endian doubles.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        _write_obj(mesh, path)
    elif fmt == "ply":
        _write_ply(mesh, path, binary=binary)
    else:
        raise MeshParseError(f"unsupported mesh format: {fmt!r}")


def _read_obj(path):
    vertices, faces = [], []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshParseError(f"{path}:{lineno}: malformed vertex line")
                vertices.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise MeshParseError(
                        f"{path}:{lineno}: non-triangle face with {len(idx)} vertices"
                    )
                try:
                    faces.append([int(tok.split("/")[0]) - 1 for tok in idx])
                except ValueError:
                    raise MeshParseError(f"{path}:{lineno}: malformed face line") from None
            # vn/vt/usemtl/... ignored
    if not vertices:
        raise MeshParseError(f"{path}: no vertices found")
    return np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _write_obj(mesh, path):
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        return _read_ply_stream(fh, path)


def _read_ply_stream(fh, path):
    if fh.readline().strip() != b"ply":
        raise MeshParseError(f"{path}: not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) or ('list', count_t, item_t, name)])
    while True:
        line = fh.readline()
        if not line:
            raise MeshParseError(f"{path}: unexpected end of header")
        tokens = line.decode("ascii", "replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise MeshParseError(f"{path}: property before element")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                elements[-1][2].append((tokens[2], tokens[1]))
        elif tokens[0] == "end_header":
            break
    if fmt == "ascii":
        return _read_ply_ascii(fh, elements, path)
    if fmt == "binary_little_endian":
        return _read_ply_binary(fh, elements, path)
    raise MeshParseError(f"{path}: unsupported PLY format {fmt!r}")


def _ply_vertex_layout(props, path):
    names = [p[0] for p in props]
    if any(p[0] == "list" for p in props):
        raise MeshParseError(f"{path}: list property in vertex element")
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise MeshParseError(f"{path}: vertex element missing property {coord!r}")
    return names.index("x"), names.index("y"), names.index("z")


def _read_ply_ascii(fh, elements, path):
    vertices = faces = None
    for name, count, props in elements:
        if name == "vertex":
            ix, iy, iz = _ply_vertex_layout(props, path)
            rows = np.empty((count, 3))
            for i in range(count):
                parts = fh.readline().split()
                if len(parts) < len(props):
                    raise MeshParseError(f"{path}: truncated vertex data")
                rows[i] = (float(parts[ix]), float(parts[iy]), float(parts[iz]))
            vertices = rows
        elif name == "face":
            rows = np.empty((count, 3), dtype=np.int64)
            for i in range(count):
                parts = fh.readline().split()
                k = int(parts[0])
                if k != 3:
                    raise MeshParseError(f"{path}: non-triangle face with {k} vertices")
                rows[i] = [int(p) for p in parts[1:4]]
            faces = rows
        else:
            for _ in range(count):
                fh.readline()
    if vertices is None:
        raise MeshParseError(f"{path}: no vertex element")
    return vertices, faces if faces is not None else np.empty((0, 3), dtype=np.int64)


def _read_ply_binary(fh, elements, path):
    vertices = faces = None
    for name, count, props in elements:
        if name == "vertex":
            ix, iy, iz = _ply_vertex_layout(props, path)
            dtype = np.dtype([(f"p{i}", "<" + _PLY_TYPES[t]) for i, (_, t) in enumerate(props)])
            data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            vertices = np.stack(
                [data[f"p{ix}"], data[f"p{iy}"], data[f"p{iz}"]], axis=1
            ).astype(np.float64)
        elif name == "face":
            spec = props[0]
            if spec[0] != "list":
                raise MeshParseError(f"{path}: face element must hold an index list")
            count_t = np.dtype("<" + _PLY_TYPES[spec[1]])
            item_t = np.dtype("<" + _PLY_TYPES[spec[2]])
            rows = np.empty((count, 3), dtype=np.int64)
            for i in range(count):
                k = int(np.frombuffer(fh.read(count_t.itemsize), dtype=count_t)[0])
                if k != 3:
                    raise MeshParseError(f"{path}: non-triangle face with {k} vertices")
                rows[i] = np.frombuffer(fh.read(item_t.itemsize * 3), dtype=item_t)
            faces = rows
        else:
            raise MeshParseError(f"{path}: cannot skip binary element {name!r}")
    if vertices is None:
        raise MeshParseError(f"{path}: no vertex element")
    return vertices, faces if faces is not None else np.empty((0, 3), dtype=np.int64)


def ply_bytes(mesh, binary=True):
    """Serialize a mesh as a PLY byte string (double-precision coordinates)."""
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    chunks = [("\n".join(header) + "\n").encode("ascii")]
    if binary:
        chunks.append(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        for a, b, c in mesh.faces:
            chunks.append(struct.pack("<Biii", 3, a, b, c))
    else:
        for x, y, z in mesh.vertices:
            chunks.append(f"{float(x)!r} {float(y)!r} {float(z)!r}\n".encode("ascii"))
        for a, b, c in mesh.faces:
            chunks.append(f"3 {a} {b} {c}\n".encode("ascii"))
    return b"".join(chunks)


def mesh_from_ply_bytes(data):
    """Parse a mesh from an in-memory PLY byte string."""
    import io

    vertices, faces = _read_ply_stream(io.BytesIO(data), "<bytes>")
    return TriangleMesh(vertices, faces)


def _write_ply(mesh, path, binary=False):
    with open(path, "wb") as fh:
        fh.write(ply_bytes(mesh, binary=binary))
