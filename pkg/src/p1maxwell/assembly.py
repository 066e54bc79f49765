"""Sparse and diagonal operators of the explicit P1 Maxwell scheme.

Vector fields use vertex-major, component-minor DOF numbering: the DOF of
component ``c`` at vertex ``i`` is ``i * dim + c``. Matrices are scipy CSR
with sorted, duplicate-free column indices; lumped operators are returned as
plain 1-D arrays holding the diagonal.
"""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import PermittivityField, centroid_epsilon
from .mesh import SimplicialMesh


def _csr(rows, cols, vals, n):
    # coo -> csr sums duplicates; the input order is fixed by the cell loop,
    # so the result is reproducible bitwise
    a = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def scalar_stiffness(mesh: SimplicialMesh) -> sp.csr_matrix:
    """(grad u, grad v) for scalar P1 functions."""
    g = mesh.gradients
    local = mesh.volumes[:, None, None] * np.einsum("cid,cjd->cij", g, g)
    c = mesh.cells
    k = c.shape[1]
    rows = np.repeat(c, k, axis=1)
    cols = np.tile(c, (1, k))
    return _csr(rows, cols, local, mesh.n_vertices)


def _vector_dofs(mesh):
    d = mesh.dim
    return (mesh.cells[:, :, None] * d + np.arange(d)).reshape(mesh.n_cells, -1)


def _from_local(mesh, local):
    """Scatter (nc, (d+1)d, (d+1)d) local vector matrices into a global CSR matrix."""
    dofs = _vector_dofs(mesh)
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1)
    cols = np.tile(dofs, (1, k))
    return _csr(rows, cols, local, mesh.n_vertices * mesh.dim)


def assemble_stiffness(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Block-diagonal vector Laplacian: the scalar stiffness on each component."""
    return sp.kron(scalar_stiffness(mesh), sp.eye(mesh.dim), format="csr")


def _div_local(mesh):
    # row (i, a), column (j, b): |K| * d_a(phi_i) * d_b(phi_j)
    g = mesh.gradients.reshape(mesh.n_cells, -1)
    return np.einsum("ci,cj->cij", g, g)


def assemble_div_div(mesh: SimplicialMesh) -> sp.csr_matrix:
    """(div u, div v)."""
    return _from_local(mesh, mesh.volumes[:, None, None] * _div_local(mesh))


def assemble_weighted_div(mesh: SimplicialMesh, eps: PermittivityField) -> sp.csr_matrix:
    """(div(eps u), div v) = (eps div u + grad eps . u, div v).

    The first part uses eps at the centroid (exact for eps_h since both
    divergences are cellwise constant); the second part uses the vertex rule
    with grad eps sampled at the vertices. The result is not symmetric.
    """
    d = mesh.dim
    nc = mesh.n_cells
    vol = mesh.volumes
    eps_c = centroid_epsilon(mesh, eps)
    local = (eps_c * vol)[:, None, None] * _div_local(mesh)
    grad_eps = np.asarray(eps.gradient(mesh.vertices), dtype=float).reshape(mesh.n_vertices, d)
    # column (j, b) carries d_b eps(x_j); row (i, a) carries d_a phi_i
    ge = grad_eps[mesh.cells].reshape(nc, -1)
    gphi = mesh.gradients.reshape(nc, -1)
    local += (vol / (d + 1))[:, None, None] * np.einsum("ci,cj->cij", gphi, ge)
    return _from_local(mesh, local)


def assemble_lumped_mass(mesh: SimplicialMesh, eps: PermittivityField | None = None) -> np.ndarray:
    """Diagonal of the eps_h-weighted vertex-rule mass matrix, length nv * dim."""
    d = mesh.dim
    w = mesh.volumes / (d + 1)
    if eps is not None:
        w = w * centroid_epsilon(mesh, eps)
    diag = np.zeros(mesh.n_vertices)
    np.add.at(diag, mesh.cells, w[:, None])
    return np.repeat(diag, d)


def assemble_boundary_lumped_mass(mesh: SimplicialMesh) -> np.ndarray:
    """Diagonal of the vertex-rule boundary mass matrix; zero at interior vertices."""
    d = mesh.dim
    diag = np.zeros(mesh.n_vertices)
    np.add.at(diag, mesh.boundary_facets, (mesh.facet_measures / d)[:, None])
    return np.repeat(diag, d)


def spmv(a: sp.csr_matrix, x) -> np.ndarray:
    """Sparse matrix-vector product with a shape check."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {a.shape} vs vector {x.shape}")
    return a @ x


def dump_matrix_market(a, path, comment=""):
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(a), comment=comment)
