"""Finite-dimensional latent deformation space with pullback metric.

A :class:`LatentBasis` is a template mesh together with ``P`` linearly
independent deformation fields, split into a shape block (first ``n_shape``
fields) and a pose block (remaining ``n_pose``).  A latent code is a plain
``(P,)`` float vector; :func:`decode` maps it affinely to a mesh by adding
the weighted fields to the template.  Latent paths are ``(T+1, P)`` arrays
with implicit uniform time step ``1/T``.

The Euclidean structure of the code space is irrelevant; distances come from
pulling the mesh metric back through the decoder: ``gram`` assembles the
``P x P`` matrix of pairwise metric products of the basis fields at the
decoded foot point, and the path energy contracts code increments against
it (forward convention, matching the discrete mesh path energy).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, TriangleMesh, mesh_from_ply_bytes, ply_bytes
from .metric import _geometry
from ._diff import h2_vertex_gradient

_BASIS_MAGIC = b"ELSABAS1"


@dataclass(frozen=True)
class LatentBasis:
    """Template plus ordered deformation fields with a shape/pose split.

    Parameters
    ----------
    template : TriangleMesh
    fields : ndarray, (P, N, 3)
        Deformation fields on the template vertices, shape block first.
    n_shape, n_pose : int
        Block sizes; ``n_shape + n_pose = P``.  Shape fields occupy indices
        ``[0, n_shape)``, pose fields ``[n_shape, P)``.
    """

    template: TriangleMesh
    fields: np.ndarray
    n_shape: int
    n_pose: int

    #: relative singular-value cutoff for the linear-independence check
    RANK_TOL = 1e-8

    def __post_init__(self):
        fields = np.asarray(self.fields, dtype=np.float64)
        n = self.template.n_vertices
        if fields.ndim != 3 or fields.shape[1:] != (n, 3):
            raise MeshError(
                f"fields must be (P, {n}, 3), got {fields.shape}"
            )
        p = fields.shape[0]
        if self.n_shape < 0 or self.n_pose < 0 or self.n_shape + self.n_pose != p:
            raise ValueError(
                f"block sizes ({self.n_shape}, {self.n_pose}) do not partition P={p}"
            )
        sv = np.linalg.svd(fields.reshape(p, -1), compute_uv=False)
        if sv[-1] < self.RANK_TOL * sv[0]:
            raise ValueError(
                f"deformation fields are not linearly independent "
                f"(singular value ratio {sv[-1] / sv[0]:.2e})"
            )
        fields.setflags(write=False)
        object.__setattr__(self, "fields", fields)

    @property
    def dim(self):
        return self.fields.shape[0]

    @property
    def shape_slice(self):
        return slice(0, self.n_shape)

    @property
    def pose_slice(self):
        return slice(self.n_shape, self.dim)

    @property
    def fields_matrix(self):
        """Fields flattened to a ``(P, 3N)`` matrix."""
        return self.fields.reshape(self.dim, -1)

    def check_code(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (self.dim,):
            raise ValueError(f"latent code must have shape ({self.dim},), got {alpha.shape}")
        if not np.all(np.isfinite(alpha)):
            raise ValueError("latent code has non-finite entries")
        return alpha


def decode(basis, alpha, validate=True):
    """Affine decoder: template vertices plus the weighted deformation fields.

    With ``validate`` on, a decoded mesh containing a degenerate face raises
    (the image of the decoder is not guaranteed to stay inside the space of
    immersed meshes).
    """
    alpha = basis.check_code(alpha)
    vertices = basis.template.vertices + np.tensordot(alpha, basis.fields, axes=1)
    return TriangleMesh(vertices, basis.template.faces, validate=validate)


def gram(basis, alpha, coefficients, geometry=None):
    """Pullback metric Gram matrix at a latent code.

    Entry ``(i, j)`` is the metric inner product of fields ``i`` and ``j``
    over the decoded mesh; the result is symmetrized to make the bilinear
    form exactly symmetric.
    """
    geom = geometry if geometry is not None else _geometry(decode(basis, alpha))
    return _gram_from_geometry(basis, geom, coefficients)


def _gram_from_geometry(basis, geom, coefficients):
    a0, a1, b1, c1, d1, a2 = coefficients.as_array()
    H = basis.fields
    P = basis.dim
    F = geom.mesh.faces
    fr = geom.frames
    G = geom.ginv
    area = fr.area
    vol = geom.vol
    out = np.zeros((P, P))

    if a0:
        out += a0 * np.einsum("pnd,qnd,n->pq", H, H, vol)
    if a1 or b1 or c1 or d1:
        dh = np.stack(
            [H[:, F[:, 1]] - H[:, F[:, 0]], H[:, F[:, 2]] - H[:, F[:, 0]]], axis=3
        )  # (P, M, 3, 2)
        prod = np.einsum("mia,pmib->pmab", fr.dq, dh)
        if a1 or b1:
            dg = prod + prod.transpose(0, 1, 3, 2)
            GX = np.einsum("mab,pmbc->pmac", G, dg)
            if a1:
                out += a1 * np.einsum("pmab,qmba,m->pq", GX, GX, area)
            if b1:
                tr = np.einsum("pmaa->pm", GX)
                out += b1 * np.einsum("pm,qm,m->pq", tr, tr, area)
        if c1:
            e1 = fr.dq[:, :, 0]
            e2 = fr.dq[:, :, 1]
            w = np.cross(dh[:, :, :, 0], e2[None]) + np.cross(e1[None], dh[:, :, :, 1])
            ndot = np.einsum("mi,pmi->pm", fr.n, w)
            dn = (w - ndot[:, :, None] * fr.n[None]) / (2.0 * area)[None, :, None]
            out += c1 * np.einsum("pmi,qmi,m->pq", dn, dn, area)
        if d1:
            xi = prod - prod.transpose(0, 1, 3, 2)
            GxiG = np.einsum("mab,pmbc,mcd->pmad", G, xi, G)
            out += d1 * np.einsum("pmad,qmad,m->pq", GxiG, xi, area)
    if a2:
        lap = np.stack([geom.lap @ H[p] for p in range(P)])
        out += a2 * np.einsum("pnd,qnd,n->pq", lap, lap, vol)

    return 0.5 * (out + out.T)


def gram_directional_derivative(basis, alpha, beta, coefficients, eps=None):
    """Central finite difference of the Gram matrix along a code direction.

    The default step is ``1e-5 * (1 + |alpha|)``; a zero direction returns
    an exactly zero matrix.
    """
    alpha = basis.check_code(alpha)
    beta = np.asarray(beta, dtype=np.float64)
    if not np.any(beta):
        return np.zeros((basis.dim, basis.dim))
    if eps is None:
        eps = 1e-5 * (1.0 + float(np.linalg.norm(alpha)))
    plus = gram(basis, alpha + eps * beta, coefficients)
    minus = gram(basis, alpha - eps * beta, coefficients)
    return (plus - minus) / (2.0 * eps)


def _check_path(basis, path):
    path = np.asarray(path, dtype=np.float64)
    if path.ndim != 2 or path.shape[1] != basis.dim:
        raise ValueError(f"path must be (T+1, {basis.dim}), got {path.shape}")
    if path.shape[0] < 2:
        raise ValueError("path needs at least two knots")
    return path


def latent_path_energy(basis, path, coefficients):
    """Discrete path energy ``T * sum_t d_t^T Gram(alpha_t) d_t``.

    Increments are forward differences; the Gram matrix is evaluated at the
    left knot of each step.
    """
    path = _check_path(basis, path)
    T = path.shape[0] - 1
    total = 0.0
    for t in range(T):
        d = path[t + 1] - path[t]
        total += float(d @ gram(basis, path[t], coefficients) @ d)
    return T * total


def latent_path_energy_with_grad(basis, path, coefficients):
    """Path energy and its gradient with respect to every knot.

    The gradient at a knot combines the quadratic terms of its two adjacent
    steps with the foot-point derivative of the Gram matrix, obtained by
    differentiating the metric with respect to the decoded vertices and
    chaining through the (constant) decoder fields.
    """
    path = _check_path(basis, path)
    T = path.shape[0] - 1
    grad = np.zeros_like(path)
    fields_mat = basis.fields_matrix
    total = 0.0
    for t in range(T):
        geom = _geometry(decode(basis, path[t]))
        gm = _gram_from_geometry(basis, geom, coefficients)
        d = path[t + 1] - path[t]
        total += float(d @ gm @ d)
        gd = 2.0 * (gm @ d)
        grad[t] -= gd
        grad[t + 1] += gd
        u = np.tensordot(d, basis.fields, axes=1)
        foot = h2_vertex_gradient(geom, u, u, coefficients)
        grad[t] += fields_mat @ foot.ravel()
    return T * total, T * grad


def substitute_shape_block(codes, target, n_shape):
    """Replace the shape block of every code, keeping pose blocks verbatim.

    Parameters
    ----------
    codes : ndarray, (K, P) or sequence of (P,) vectors
    target : ndarray, (P,)
        Code whose shape block ``[0, n_shape)`` is copied in.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (codes.shape[1],):
        raise ValueError(
            f"target code length {target.shape} does not match codes {codes.shape}"
        )
    if not 0 <= n_shape <= codes.shape[1]:
        raise ValueError(f"invalid shape-block size {n_shape}")
    out = codes.copy()
    out[:, :n_shape] = target[:n_shape]
    return out


# ---------------------------------------------------------------------------
# basis container file
#
# layout (little endian):
#   8 bytes   magic "ELSABAS1"
#   u64       byte length of the embedded binary PLY template
#   ...       template mesh as binary little-endian PLY
#   u32 x3    P, n_shape, n_pose
#   u64       N (vertex count, redundant check)
#   f64 x P*N*3   deformation fields, C order
# ---------------------------------------------------------------------------


def save_basis(basis, path):
    """Write a basis to its binary container file."""
    blob = ply_bytes(basis.template, binary=True)
    with open(path, "wb") as fh:
        fh.write(_BASIS_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<IIIQ", basis.dim, basis.n_shape, basis.n_pose,
                             basis.template.n_vertices))
        fh.write(np.ascontiguousarray(basis.fields, dtype="<f8").tobytes())


def load_basis(path):
    """Read a basis container written by :func:`save_basis`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _BASIS_MAGIC:
            raise MeshError(f"{path}: not a basis file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        template = mesh_from_ply_bytes(fh.read(blob_len))
        p, m, n, nv = struct.unpack("<IIIQ", fh.read(20))
        if nv != template.n_vertices:
            raise MeshError(f"{path}: vertex count mismatch in basis file")
        data = np.frombuffer(fh.read(8 * p * nv * 3), dtype="<f8")
        if data.size != p * nv * 3:
            raise MeshError(f"{path}: truncated basis file")
        fields = data.reshape(p, nv, 3).copy()
    return LatentBasis(template=template, fields=fields, n_shape=m, n_pose=n)
