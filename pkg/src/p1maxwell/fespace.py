"""Coefficient fields, P1 nodal vector fields, interpolation and simplex quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .mesh import SimplicialMesh


@dataclass(frozen=True)
class PermittivityField:
    """Scalar permittivity with its analytic gradient and C^k norm constants.

    ``value`` maps an (n, d) array of points to (n,) values; ``gradient`` maps
    it to (n, d). The constants are the sup norm of eps and the sup norms of
    its first and second derivatives; they are supplied by the caller.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    sup_norm: float
    seminorm_1: float
    seminorm_2: float
    label: str = "eps"

    @classmethod
    def constant(cls, c: float = 1.0) -> "PermittivityField":
        return cls(
            value=lambda x: np.full(len(x), float(c)),
            gradient=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            sup_norm=abs(float(c)), seminorm_1=0.0, seminorm_2=0.0,
            label=f"const{c:g}",
        )

    def __call__(self, x):
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))


class NodalVectorField:
    """Vertex values of a P1 vector field: ``values[i, c]`` is component c at vertex i."""

    def __init__(self, mesh: SimplicialMesh, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(mesh.n_vertices, -1)
        if values.shape[0] != mesh.n_vertices:
            raise ValueError(f"expected {mesh.n_vertices} rows, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field has non-finite entries")
        self.mesh = mesh
        self.values = values

    @classmethod
    def zeros(cls, mesh, ncomp=None):
        return cls(mesh, np.zeros((mesh.n_vertices, ncomp or mesh.dim)))

    @property
    def flat(self) -> np.ndarray:
        """Vertex-major, component-minor DOF vector."""
        return self.values.ravel()

    def copy(self):
        return NodalVectorField(self.mesh, self.values.copy())

    def __repr__(self):
        return f"NodalVectorField(nv={self.values.shape[0]}, ncomp={self.values.shape[1]})"


def interpolate(f, mesh: SimplicialMesh) -> NodalVectorField:
    """P1 interpolant: evaluate ``f`` (vectorised over an (n, d) point array) at vertices."""
    vals = np.asarray(f(mesh.vertices), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    bad = ~np.all(np.isfinite(vals), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"non-finite value at vertex {i} {tuple(mesh.vertices[i])}")
    return NodalVectorField(mesh, vals)


def centroid_epsilon(mesh: SimplicialMesh, eps: PermittivityField) -> np.ndarray:
    """Piecewise-constant surrogate of eps: its value at each cell centroid."""
    return np.asarray(eps.value(mesh.centroids), dtype=float)


# -- quadrature ----------------------------------------------------------------

# 6-point degree-4 rule on the triangle (Dunavant), barycentric coordinates
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
_TRI_DEG4 = (
    np.array([[_A, _A, 1 - 2 * _A], [_A, 1 - 2 * _A, _A], [1 - 2 * _A, _A, _A],
              [_B, _B, 1 - 2 * _B], [_B, 1 - 2 * _B, _B], [1 - 2 * _B, _B, _B]]),
    np.array([_WA] * 3 + [_WB] * 3),
)

RULES = ("vertex", "centroid", "degree4")


@lru_cache(maxsize=None)
def conical_product_rule(dim: int, n: int):
    """Collapsed Gauss-Jacobi rule on the reference simplex, exact to degree 2n-1.

    Returns barycentric points (q, dim+1) and weights summing to 1.
    """
    factors = []
    for k in range(dim):
        alpha = dim - 1 - k
        x, w = roots_jacobi(n, alpha, 0)
        t = (x + 1) / 2
        factors.append((t, w / 2 ** (alpha + 1)))
    pts, wts = [], []
    for idx in np.ndindex(*(n,) * dim):
        ts = [factors[k][0][i] for k, i in enumerate(idx)]
        w = np.prod([factors[k][1][i] for k, i in enumerate(idx)])
        # Duffy map: x_1 = t_1, x_2 = (1-t_1) t_2, ...
        coords, rest = [], 1.0
        for t in ts:
            coords.append(rest * t)
            rest *= 1 - t
        pts.append([rest] + coords)
        wts.append(w)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


def reference_rule(rule: str, dim: int):
    """Barycentric points and weights (summing to 1) of a named rule."""
    if rule == "vertex":
        return np.eye(dim + 1), np.full(dim + 1, 1.0 / (dim + 1))
    if rule == "centroid":
        return np.full((1, dim + 1), 1.0 / (dim + 1)), np.ones(1)
    if rule == "degree4":
        if dim == 2:
            return _TRI_DEG4
        return conical_product_rule(dim, 3)
    raise ValueError(f"unknown quadrature rule {rule!r}; expected one of {RULES}")


def quadrature(rule: str, cell_vertices):
    """Physical points and weights of ``rule`` on one simplex.

    ``cell_vertices`` is a (d+1, d) array. Weights sum to the cell volume.
    """
    p = np.asarray(cell_vertices, dtype=float)
    dim = p.shape[1]
    bary, w = reference_rule(rule, dim)
    jac = p[1:] - p[0]
    vol = abs(np.linalg.det(jac)) / np.prod(np.arange(1, dim + 1))
    return bary @ p, w * vol


def mesh_quadrature(mesh: SimplicialMesh, rule: str = "degree4"):
    """Quadrature on every cell at once.

    Returns ``(bary, points, weights)`` with points of shape (nc, q, d) and
    weights (nc, q). ``bary`` (q, d+1) evaluates P1 fields at the points.
    """
    bary, w = reference_rule(rule, mesh.dim)
    pts = np.einsum("qi,cid->cqd", bary, mesh.vertices[mesh.cells])
    return bary, pts, mesh.volumes[:, None] * w[None, :]


def evaluate_p1(mesh: SimplicialMesh, values, bary):
    """Values of a nodal field at barycentric points of every cell: (nc, q, ncomp)."""
    values = np.asarray(values, dtype=float).reshape(mesh.n_vertices, -1)
    return np.einsum("qi,cik->cqk", bary, values[mesh.cells])


def p1_cell_gradients(mesh: SimplicialMesh, values):
    """Cellwise-constant gradient of a nodal field: (nc, ncomp, d)."""
    values = np.asarray(values, dtype=float).reshape(mesh.n_vertices, -1)
    return np.einsum("cik,cid->ckd", values[mesh.cells], mesh.gradients)


def p1_evaluation_matrix(mesh: SimplicialMesh, bary) -> sp.csr_matrix:
    """Sparse (nc*q, nv) matrix mapping vertex values to values at the points."""
    nc, k = mesh.cells.shape
    q = len(bary)
    rows = np.repeat(np.arange(nc * q), k)
    cols = np.repeat(mesh.cells, q, axis=0).ravel()
    vals = np.tile(bary, (nc, 1)).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(nc * q, mesh.n_vertices))


def p1_gradient_matrix(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Sparse (nc*d, nv) matrix mapping vertex values to cellwise gradients."""
    nc, k = mesh.cells.shape
    d = mesh.dim
    rows = np.repeat(np.arange(nc * d), k)
    cols = np.repeat(mesh.cells, d, axis=0).ravel()
    vals = np.transpose(mesh.gradients, (0, 2, 1)).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(nc * d, mesh.n_vertices))


def l2_norm(mesh: SimplicialMesh, values, weight=None, rule="degree4") -> float:
    """Exact L2 norm of a P1 field (optionally with a cellwise-constant weight)."""
    bary, _, w = mesh_quadrature(mesh, rule)
    u = evaluate_p1(mesh, values, bary)
    if weight is not None:
        w = w * np.asarray(weight)[:, None]
    return float(np.sqrt(np.einsum("cq,cqk->", w, u * u)))


def lumped_norm(mesh: SimplicialMesh, values, weight=None) -> float:
    """Vertex-rule (mass-lumped) L2 norm of a P1 field."""
    return l2_norm(mesh, values, weight, rule="vertex")


def boundary_norms(mesh: SimplicialMesh, values):
    """Exact and vertex-rule L2 norms of a P1 field's trace on the boundary."""
    values = np.asarray(values, dtype=float).reshape(mesh.n_vertices, -1)
    k = mesh.dim  # vertices per facet
    u = values[mesh.boundary_facets]  # (nf, k, ncomp)
    meas = mesh.facet_measures
    gram = np.einsum("fik,fjk->fij", u, u)
    local = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))  # int lambda_i lambda_j / |F|
    exact = np.einsum("f,fij,ij->", meas, gram, local)
    lumped = np.einsum("f,fii->", meas, gram) / k
    return float(np.sqrt(exact)), float(np.sqrt(lumped))
