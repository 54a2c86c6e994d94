"""Discrete six-parameter invariant second-order Sobolev metric.

The metric on vertex fields ``h, k`` over a mesh ``q`` is the weighted sum

    a0 * sum_i <h_i, k_i> vol_i
  + a1 * sum_f tr(g^-1 dg(h) g^-1 dg(k)) area_f
  + b1 * sum_f tr(g^-1 dg(h)) tr(g^-1 dg(k)) area_f
  + c1 * sum_f <dn(h), dn(k)> area_f
  + d1 * sum_f tr(g^-1 xi(h) g^-1 xi(k)^T) area_f
  + a2 * sum_i <(L h)_i, (L k)_i> vol_i

with ``dg(h) = dq^T dh + dh^T dq`` the metric-tensor variation, ``dn(h)`` the
normal variation, ``xi(h) = dq^T dh - dh^T dq`` and ``L`` the cotangent
Laplacian.  The four first-order terms penalize shearing, stretching, bending
and in-plane rotation respectively.

:func:`h2_inner` evaluates the polarized analytic form; :func:`path_energy`
evaluates the discrete geodesic energy of a mesh path, where the variations
are finite differences between consecutive meshes and all foot-point
quantities (areas, inverse metric tensors, Laplacian weights) are taken at
the left endpoint of each step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mesh import (
    DegenerateFaceError,
    MeshError,
    TriangleMesh,
    cotan_laplacian,
    face_frames,
    vertex_volumes,
)

#: faces whose metric tensor has a larger condition number are rejected
COND_LIMIT = 1e12


@dataclass(frozen=True)
class MetricCoefficients:
    """Nonnegative weights ``(a0, a1, b1, c1, d1, a2)`` of the metric terms."""

    a0: float
    a1: float
    b1: float
    c1: float
    d1: float
    a2: float

    def __post_init__(self):
        if any(c < 0 for c in self.as_array()):
            raise ValueError(f"metric coefficients must be nonnegative: {self}")

    def as_array(self):
        return np.array([self.a0, self.a1, self.b1, self.c1, self.d1, self.a2])

    @property
    def is_nondegenerate(self):
        """True if the induced geodesic distance is provably a true distance.

        Requires ``a0 > 0`` together with either all four first-order weights
        positive or ``a2 > 0``.
        """
        first_order = self.a1 > 0 and self.b1 > 0 and self.c1 > 0 and self.d1 > 0
        return self.a0 > 0 and (first_order or self.a2 > 0)

    @classmethod
    def bodies(cls):
        """Default weights for whole-body surfaces (near-isometric motion)."""
        return cls(1.0, 1000.0, 100.0, 1.0, 1.0, 1.0)

    @classmethod
    def faces(cls):
        """Default weights for face surfaces (normal-consistent expression)."""
        return cls(1.0, 10.0, 10.0, 10.0, 1.0, 1.0)


@dataclass(frozen=True)
class MetricTerms:
    """Analytic first/second-order variations of a mesh along a vertex field.

    Attributes
    ----------
    dg : ndarray, (M, 2, 2)
        Variation of the metric tensor, ``dq^T dh + dh^T dq``.
    dn : ndarray, (M, 3)
        Variation of the unit normal.
    dh : ndarray, (M, 3, 2)
        Per-face differential of the field.
    lap : ndarray, (N, 3)
        Image of the field under the cotangent Laplacian.
    """

    dg: np.ndarray
    dn: np.ndarray
    dh: np.ndarray
    lap: np.ndarray


@dataclass(frozen=True)
class _MeshGeometry:
    """Cached per-mesh quantities shared by metric evaluations."""

    mesh: TriangleMesh
    frames: object
    ginv: np.ndarray
    vol: np.ndarray
    lap: object  # sparse cotangent Laplacian


def _inverse_2x2(g):
    """Closed-form inverses of symmetric positive definite 2x2 blocks.

    Raises ``DegenerateFaceError`` when a block's condition number exceeds
    ``COND_LIMIT``.
    """
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    half_tr = 0.5 * (g[:, 0, 0] + g[:, 1, 1])
    root = np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    lo = half_tr - root
    hi = half_tr + root
    bad = (det <= 0.0) | (lo * COND_LIMIT <= hi)
    if bad.any():
        raise DegenerateFaceError(
            "ill-conditioned metric tensor", int(np.flatnonzero(bad)[0])
        )
    inv = np.empty_like(g)
    inv[:, 0, 0] = g[:, 1, 1] / det
    inv[:, 1, 1] = g[:, 0, 0] / det
    inv[:, 0, 1] = -g[:, 0, 1] / det
    inv[:, 1, 0] = -g[:, 1, 0] / det
    return inv


def _geometry(mesh):
    frames = face_frames(mesh)
    return _MeshGeometry(
        mesh=mesh,
        frames=frames,
        ginv=_inverse_2x2(frames.g),
        vol=vertex_volumes(mesh, areas=frames.area),
        lap=cotan_laplacian(mesh),
    )


def _check_field(mesh, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (mesh.n_vertices, 3):
        raise MeshError(f"field shape {h.shape} does not match mesh ({mesh.n_vertices}, 3)")
    return h


def _field_differential(faces, h):
    """Per-face 3x2 differential ``[h1 - h0, h2 - h0]``."""
    h0, h1, h2 = h[faces[:, 0]], h[faces[:, 1]], h[faces[:, 2]]
    return np.stack([h1 - h0, h2 - h0], axis=2)


def _normal_variation(frames, dh):
    """Analytic variation of the unit normal along the field with differential dh."""
    e1 = frames.dq[:, :, 0]
    e2 = frames.dq[:, :, 1]
    w = np.cross(dh[:, :, 0], e2) + np.cross(e1, dh[:, :, 1])
    n = frames.n
    s = 2.0 * frames.area
    return (w - n * np.einsum("ij,ij->i", n, w)[:, None]) / s[:, None]


def metric_terms(mesh, h, geometry=None):
    """Analytic directional derivatives of the mesh geometry along ``h``."""
    h = _check_field(mesh, h)
    geom = geometry if geometry is not None else _geometry(mesh)
    dh = _field_differential(mesh.faces, h)
    dg = np.einsum("mia,mib->mab", geom.frames.dq, dh)
    dg = dg + dg.transpose(0, 2, 1)
    dn = _normal_variation(geom.frames, dh)
    return MetricTerms(dg=dg, dn=dn, dh=dh, lap=geom.lap @ h)


def h2_inner_terms(mesh, h, k, geometry=None):
    """The six unweighted metric terms as an array ``[T0, ..., T5]``.

    ``h2_inner`` equals the dot product of this vector with the coefficient
    vector; exposing the raw terms supports per-term validation and the exact
    per-coefficient linearity of the metric.
    """
    geom = geometry if geometry is not None else _geometry(mesh)
    th = metric_terms(mesh, h, geometry=geom)
    tk = th if k is h else metric_terms(mesh, k, geometry=geom)
    return _terms_from_variations(geom, _check_field(mesh, h), _check_field(mesh, k), th, tk)


def _terms_from_variations(geom, h, k, th, tk):
    area = geom.frames.area
    vol = geom.vol
    ginv = geom.ginv
    dq = geom.frames.dq

    t0 = float(np.einsum("ij,ij,i->", h, k, vol))
    gh = np.einsum("mab,mbc->mac", ginv, th.dg)
    gk = np.einsum("mab,mbc->mac", ginv, tk.dg)
    t1 = float(np.einsum("mab,mba,m->", gh, gk, area))
    t2 = float(np.einsum("maa,mbb,m->", gh, gk, area))
    t3 = float(np.einsum("mi,mi,m->", th.dn, tk.dn, area))
    xi_h = np.einsum("mia,mib->mab", dq, th.dh)
    xi_h = xi_h - xi_h.transpose(0, 2, 1)
    xi_k = np.einsum("mia,mib->mab", dq, tk.dh)
    xi_k = xi_k - xi_k.transpose(0, 2, 1)
    # tr(ginv xi_h ginv xi_k^T)
    t4 = float(np.einsum("mab,mbc,mcd,mad,m->", ginv, xi_h, ginv, xi_k, area))
    t5 = float(np.einsum("ij,ij,i->", th.lap, tk.lap, vol))
    return np.array([t0, t1, t2, t3, t4, t5])


def h2_inner(mesh, h, k, coefficients, geometry=None):
    """Polarized metric inner product of two vertex fields at a mesh.

    Emits a warning (not an error) when the coefficient vector fails the
    non-degeneracy condition, since the bilinear form itself is still well
    defined.
    """
    if not coefficients.is_nondegenerate:
        warnings.warn(
            "metric coefficients do not satisfy the non-degeneracy condition",
            stacklevel=2,
        )
    terms = h2_inner_terms(mesh, h, k, geometry=geometry)
    return float(coefficients.as_array() @ terms)


def path_energy(meshes, coefficients):
    """Discrete geodesic energy of a mesh path with shared topology.

    ``E = T * sum_t G_{q_t}(q_{t+1} - q_t)`` where the metric-tensor and
    normal variations are finite differences between consecutive meshes and
    all weights are evaluated at the left endpoint (forward convention).
    """
    meshes = list(meshes)
    if len(meshes) < 2:
        raise ValueError("a path needs at least two meshes")
    first = meshes[0]
    for m in meshes[1:]:
        if not first.same_topology(m):
            raise MeshError("path meshes must share topology")
    from ._diff import step_energy_discrete

    T = len(meshes) - 1
    total = 0.0
    for left, right in zip(meshes[:-1], meshes[1:]):
        total += step_energy_discrete(_geometry(left), right.vertices, coefficients)
    return T * total
