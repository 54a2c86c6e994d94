"""Parametrization-blind kernel distance between surface meshes.

Each mesh is represented by its face atoms (barycenter, unit normal, area)
and compared through the kernel

    k(x, n, x', n') = exp(-|x - x'|^2 / sigma^2) * (n . n')^2

summed with area weights over all face pairs.  The squared distance
``<a,a> - 2<a,b> + <b,b>`` depends only on the atom multisets, so it is
blind to vertex ordering, face ordering and (through the squared cosine)
to orientation flips.  The gradient with respect to the vertex positions of
the first mesh is assembled analytically; no kernel approximation is used,
pair sums run exactly in fixed-size blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._diff import area_edge_grads, normal_edge_grads, scatter_edge_grads
from .mesh import face_samples

#: number of source atoms per block in pair sums (bounds memory, fixes the
#: reduction order so results do not depend on how work is split)
_BLOCK = 1024


@dataclass(frozen=True)
class VarifoldConfig:
    """Spatial kernel scale; same length units as the vertex coordinates."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def _sq_distances(ca, cb):
    """Pairwise squared center distances via the Gram expansion."""
    d2 = (
        np.einsum("ij,ij->i", ca, ca)[:, None]
        + np.einsum("ij,ij->i", cb, cb)[None, :]
        - 2.0 * (ca @ cb.T)
    )
    return np.maximum(d2, 0.0)


def _pair_sum(ca, na, aa, cb, nb, ab, sigma):
    """sum_{f, f'} k(atoms_a[f], atoms_b[f']) * area_a[f] * area_b[f']."""
    inv_s2 = 1.0 / sigma**2
    total = 0.0
    for start in range(0, ca.shape[0], _BLOCK):
        sl = slice(start, start + _BLOCK)
        kern = np.exp(-_sq_distances(ca[sl], cb) * inv_s2) * (na[sl] @ nb.T) ** 2
        total += float(aa[sl] @ kern @ ab)
    return total


def varifold_norm_sq(mesh, config):
    """Squared varifold norm ``<m, m>`` of a single mesh."""
    s = face_samples(mesh)
    return _pair_sum(s.centers, s.normals, s.areas, s.centers, s.normals, s.areas, config.sigma)


def varifold_sqdist(a, b, config):
    """Squared kernel distance between two meshes, clamped at zero.

    The clamp guards against floating-point cancellation when the two atom
    multisets (barycenter, normal, area) coincide.
    """
    sa = face_samples(a)
    sb = face_samples(b)
    aa = _pair_sum(sa.centers, sa.normals, sa.areas, sa.centers, sa.normals, sa.areas, config.sigma)
    bb = _pair_sum(sb.centers, sb.normals, sb.areas, sb.centers, sb.normals, sb.areas, config.sigma)
    ab = _pair_sum(sa.centers, sa.normals, sa.areas, sb.centers, sb.normals, sb.areas, config.sigma)
    return max(aa - 2.0 * ab + bb, 0.0)


def _atom_grads(ca, na, aa, cb, nb, ab, sigma):
    """Gradients of the pair sum w.r.t. the atoms of the first mesh.

    Returns per-face arrays ``(d/d_center, d/d_normal, d/d_area)``.
    """
    inv_s2 = 1.0 / sigma**2
    gc = np.zeros_like(ca)
    gn = np.zeros_like(na)
    ga = np.zeros_like(aa)
    for start in range(0, ca.shape[0], _BLOCK):
        sl = slice(start, start + _BLOCK)
        dot = na[sl] @ nb.T
        expo = np.exp(-_sq_distances(ca[sl], cb) * inv_s2)
        kern = expo * dot**2
        kw = kern * (aa[sl, None] * ab[None, :])
        row = kw.sum(axis=1)
        gc[sl] = -2.0 * inv_s2 * (row[:, None] * ca[sl] - kw @ cb)
        gn[sl] = (2.0 * expo * dot * (aa[sl, None] * ab[None, :])) @ nb
        ga[sl] = kern @ ab
    return gc, gn, ga


def varifold_grad(a, b, config):
    """Gradient of :func:`varifold_sqdist` w.r.t. the vertices of ``a``.

    The chain rule runs through barycenters (uniform thirds), unit normals
    and areas of the faces of ``a``; ``b`` is held fixed.
    """
    sa = face_samples(a)
    sb = face_samples(b)
    # d<a,a>/datom carries a factor 2 by symmetry of the kernel
    gc, gn, ga = _atom_grads(
        sa.centers, sa.normals, sa.areas, sa.centers, sa.normals, sa.areas, config.sigma
    )
    gc2, gn2, ga2 = _atom_grads(
        sa.centers, sa.normals, sa.areas, sb.centers, sb.normals, sb.areas, config.sigma
    )
    gc = 2.0 * gc - 2.0 * gc2
    gn = 2.0 * gn - 2.0 * gn2
    ga = 2.0 * ga - 2.0 * ga2

    f = a.faces
    v = a.vertices
    grad = np.zeros_like(v)
    third = gc / 3.0
    for k in range(3):
        np.add.at(grad, f[:, k], third)
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    s = 2.0 * sa.areas
    ge1, ge2 = normal_edge_grads(e1, e2, sa.normals, s, gn)
    da1, da2 = area_edge_grads(e1, e2, sa.normals, ga)
    scatter_edge_grads(grad, f, ge1 + da1, ge2 + da2)
    return grad


def remeshing_relative_error(a, a_remeshed, sigmas):
    """Relative varifold error of a re-triangulation across kernel scales.

    Returns ``sqrt(sqdist(a, a_remeshed)) / |a_remeshed|_Var`` for each
    sigma.  For scales well above the triangle size the error of a faithful
    remesh stays near zero; it grows once sigma resolves individual faces.
    """
    out = []
    for sigma in sigmas:
        cfg = VarifoldConfig(sigma=float(sigma))
        norm = np.sqrt(varifold_norm_sq(a_remeshed, cfg))
        out.append(float(np.sqrt(varifold_sqdist(a, a_remeshed, cfg)) / norm))
    return out
