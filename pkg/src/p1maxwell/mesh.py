"""Simplicial meshes: storage, the structured square/disk family, geometry and I/O.

A mesh is a set of vertices plus d-simplices (triangles in 2D, tetrahedra in
3D). Boundary facets are derived from the connectivity: a facet that belongs
to exactly one cell is on the boundary.

Example
-------
>>> m = build_disk_mesh(2)
>>> m.n_cells, m.n_vertices
(128, 81)
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data (degenerate cell, bad indices, broken topology)."""


class MeshFormatError(MeshError):
    """Malformed mesh text file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _facets_of(cells):
    """All (cell, local facet) combinations; facet i is the one opposite vertex i.

    For triangles listed counter-clockwise, facet i = (v[i+1], v[i+2]) keeps the
    counter-clockwise orientation, so the boundary edges chain into a loop.
    """
    nverts = cells.shape[1]
    local = [[(i + j) % nverts for j in range(1, nverts)] for i in range(nverts)]
    return cells[:, local]  # (nc, d+1, d)


def find_boundary_facets(cells):
    """Return ``(facets, parents)`` for facets owned by exactly one cell.

    Raises MeshError if some facet is shared by more than two cells.
    """
    cells = np.asarray(cells)
    nc, nverts = cells.shape
    facets = _facets_of(cells).reshape(-1, nverts - 1)
    parents = np.repeat(np.arange(nc), nverts)
    keys = np.sort(facets, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                   return_counts=True)
    inverse = inverse.ravel()
    if counts.max(initial=0) > 2:
        raise MeshError("a facet is shared by more than two cells")
    on_boundary = counts[inverse] == 1
    return facets[on_boundary], parents[on_boundary]


def _signed_volumes(vertices, cells):
    p = vertices[cells]  # (nc, d+1, d)
    edges = p[:, 1:, :] - p[:, :1, :]
    d = vertices.shape[1]
    return np.linalg.det(edges) / math.factorial(d)


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Immutable simplicial mesh in 2 or 3 dimensions.

    ``boundary_facets[f]`` lists the ``dim`` vertex indices of boundary facet f
    and ``facet_parents[f]`` the index of the unique cell containing it.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray = None
    facet_parents: np.ndarray = None
    name: str = field(default="mesh", compare=False)

    def __post_init__(self):
        vertices = _frozen(self.vertices, np.float64)
        cells = _frozen(self.cells, np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError("vertices must be an (nv, 2) or (nv, 3) array")
        dim = vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            raise MeshError(f"cells must have {dim + 1} vertex indices")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("cell vertex index out of range")
        if np.any(np.diff(np.sort(cells, axis=1), axis=1) == 0):
            raise MeshError("cell with repeated vertex")
        vol = _signed_volumes(vertices, cells)
        if np.any(vol <= 0):
            bad = int(np.flatnonzero(vol <= 0)[0])
            raise MeshError(f"cell {bad} has non-positive signed volume {vol[bad]:g}")
        if self.boundary_facets is None:
            facets, parents = find_boundary_facets(cells)
        else:
            facets = np.asarray(self.boundary_facets)
            parents = np.asarray(self.facet_parents)
            if facets.shape != (len(parents), dim):
                raise MeshError("boundary facets do not match their parent list")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "boundary_facets", _frozen(facets.reshape(-1, dim), np.int64))
        object.__setattr__(self, "facet_parents", _frozen(parents, np.int64))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        pairs = list(itertools.combinations(range(self.dim + 1), 2))
        e = np.sort(self.cells[:, pairs].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @property
    def h_max(self) -> float:
        return float(self.edge_lengths.max())

    @property
    def h_min(self) -> float:
        return float(self.edge_lengths.min())

    @cached_property
    def volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.cells)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the barycentric functions, shape (nc, d+1, d)."""
        p = self.vertices[self.cells]
        jac = p[:, 1:, :] - p[:, :1, :]  # rows are edge vectors
        inv = np.linalg.inv(jac)  # columns give gradients of lambda_1..lambda_d
        g = np.transpose(inv, (0, 2, 1))
        g0 = -g.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g], axis=1)

    @cached_property
    def facet_measures(self) -> np.ndarray:
        return _simplex_measures(self.vertices[self.boundary_facets])

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    @property
    def area(self) -> float:
        return float(self.volumes.sum())

    def same_as(self, other: "SimplicialMesh") -> bool:
        """Bitwise equality of coordinates and connectivity."""
        return (self.vertices.shape == other.vertices.shape
                and self.vertices.tobytes() == other.vertices.tobytes()
                and np.array_equal(self.cells, other.cells)
                and np.array_equal(self.boundary_facets, other.boundary_facets)
                and np.array_equal(self.facet_parents, other.facet_parents))


def _simplex_measures(points):
    """Measure of k-simplices embedded in R^d; ``points`` has shape (n, k+1, d)."""
    edges = points[:, 1:, :] - points[:, :1, :]
    gram = np.einsum("nik,njk->nij", edges, edges)
    k = edges.shape[1]
    det = np.linalg.det(gram)
    return np.sqrt(np.clip(det, 0.0, None)) / math.factorial(k)


def cell_geometry(mesh: SimplicialMesh, cell: int):
    """Volume, centroid and barycentric gradients of one cell."""
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell index {cell} out of range")
    return (float(mesh.volumes[cell]), mesh.centroids[cell].copy(),
            mesh.gradients[cell].copy())


def simplex_geometry(points):
    """Volume, centroid and barycentric gradients of a single simplex.

    Unlike the mesh accessor this accepts any vertex order; a zero volume
    raises MeshError.
    """
    p = np.asarray(points, dtype=float)
    jac = p[1:] - p[0]
    vol = abs(np.linalg.det(jac)) / math.factorial(len(jac))
    if vol <= 1e-14 * max(1.0, np.abs(jac).max()) ** len(jac):
        raise MeshError("degenerate simplex (zero volume)")
    g = np.linalg.inv(jac).T
    return vol, p.mean(axis=0), np.vstack([-g.sum(axis=0), g])


def facet_measure(mesh: SimplicialMesh, facet: int) -> float:
    """Length (2D) or area (3D) of boundary facet ``facet``."""
    if not 0 <= facet < len(mesh.boundary_facets):
        raise IndexError(f"facet index {facet} out of range")
    m = float(mesh.facet_measures[facet])
    if m <= 0:
        raise MeshError(f"boundary facet {facet} is degenerate")
    return m


# -- structured families -----------------------------------------------------

def _check_level(level):
    if int(level) != level or level < 1:
        raise ValueError(f"mesh level must be an integer >= 1, got {level!r}")
    return int(level)


def expected_cells(level: int) -> int:
    return 2 * 2 ** (2 * level + 2)


def expected_vertices(level: int) -> int:
    return (2 ** (level + 1) + 1) ** 2


def reference_h(level: int) -> float:
    return 2.0 ** -level


def build_square_mesh(level: int) -> SimplicialMesh:
    """Uniform triangulation of [-1, 1]^2 with 2 * 2^(2l+2) triangles.

    Grid spacing is 2^-l. Each grid square is cut by the diagonal parallel to
    x1 = x2 when it lies where x1*x2 >= 0, and parallel to x1 = -x2 otherwise,
    so the pattern is symmetric about both axes. Vertices are numbered
    row-major (x fastest).
    """
    level = _check_level(level)
    n = 2 ** (level + 1)
    h = 2.0 / n
    coords = -1.0 + h * np.arange(n + 1)
    x, y = np.meshgrid(coords, coords)
    vertices = np.column_stack([x.ravel(), y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    sw = j * (n + 1) + i
    se, nw = sw + 1, sw + n + 1
    ne = nw + 1
    cx = coords[i] + h / 2
    cy = coords[j] + h / 2
    main = (cx * cy) > 0  # never zero at square centres
    tri = np.empty((2 * n * n, 3), dtype=np.int64)
    tri[0::2] = np.where(main[:, None], np.column_stack([sw, se, ne]),
                         np.column_stack([sw, se, nw]))
    tri[1::2] = np.where(main[:, None], np.column_stack([sw, ne, nw]),
                         np.column_stack([se, ne, nw]))
    return SimplicialMesh(vertices, tri, name=f"square-l{level}")


def square_to_disk(points) -> np.ndarray:
    """Map points of [-1, 1]^2 onto the closed unit disk.

    A point with sup-norm s is sent to Euclidean radius s; each square ring
    ``{|p|_inf = s}`` is wrapped onto the circle of radius s with arc length
    proportional to the position along the ring (pi/4 per half side).
    """
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    ax, ay = np.abs(x), np.abs(y)
    s = np.maximum(ax, ay)
    safe_x = np.where(ax > 0, x, 1.0)
    safe_y = np.where(ay > 0, y, 1.0)
    quarter = np.pi / 4
    theta = np.where(
        ax >= ay,
        np.where(x > 0, quarter * y / safe_x, np.pi + quarter * y / safe_x),
        np.where(y > 0, 2 * quarter - quarter * x / safe_y,
                 -2 * quarter - quarter * x / safe_y),
    )
    out = np.column_stack([s * np.cos(theta), s * np.sin(theta)])
    out[s == 0] = 0.0
    return out


def map_square_to_disk(square_mesh: SimplicialMesh) -> SimplicialMesh:
    """Apply :func:`square_to_disk` vertex-wise; connectivity is unchanged."""
    mapped = square_to_disk(square_mesh.vertices)
    name = square_mesh.name.replace("square", "disk")
    return SimplicialMesh(mapped, square_mesh.cells, square_mesh.boundary_facets,
                          square_mesh.facet_parents, name=name)


def build_disk_mesh(level: int) -> SimplicialMesh:
    return map_square_to_disk(build_square_mesh(level))


def build_cube_mesh(n: int, jitter: float = 0.0, seed=None) -> SimplicialMesh:
    """Unit cube split into n^3 sub-cubes of 6 tetrahedra each.

    ``jitter`` moves interior vertices randomly by up to that fraction of the
    spacing; useful for tests that want irregular cells.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c = np.linspace(0.0, 1.0, n + 1)
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    vertices = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    if jitter:
        rng = np.random.default_rng(seed)
        interior = np.all((vertices > 0) & (vertices < 1), axis=1)
        shift = rng.uniform(-jitter, jitter, size=vertices.shape) / n
        vertices[interior] += shift[interior]

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    tets = []
    unit = np.eye(3, dtype=int)
    for i, j, k in itertools.product(range(n), repeat=3):
        base = np.array([i, j, k])
        for perm in itertools.permutations(range(3)):
            path = [base.copy()]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            tets.append([vid(*p) for p in path])
    tets = np.array(tets, dtype=np.int64)
    vol = _signed_volumes(vertices, tets)
    flip = vol < 0
    tets[flip, 0], tets[flip, 1] = tets[flip, 1], tets[flip, 0].copy()
    return SimplicialMesh(vertices, tets, name=f"cube-n{n}")


# -- I/O -----------------------------------------------------------------------

def save_mesh(mesh: SimplicialMesh, path) -> None:
    """Write the ASCII mesh format (header ``dim nv nc nbf``, 0-based indices)."""
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {len(mesh.boundary_facets)}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines += [" ".join(str(int(i)) for i in f) + f" {int(p)}"
              for f, p in zip(mesh.boundary_facets, mesh.facet_parents)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> SimplicialMesh:
    """Read a file written by :func:`save_mesh`.

    Parse failures raise MeshFormatError carrying the 1-based line number.
    """
    text = Path(path).read_text().splitlines()
    if not text:
        raise MeshFormatError("empty file", line=1)

    def ints(lineno, expected):
        try:
            vals = [int(t) for t in text[lineno - 1].split()]
        except ValueError:
            raise MeshFormatError("expected integers", line=lineno) from None
        if len(vals) != expected:
            raise MeshFormatError(f"expected {expected} values, found {len(vals)}", line=lineno)
        return vals

    dim, nv, nc, nbf = ints(1, 4)
    if dim not in (2, 3):
        raise MeshFormatError(f"unsupported dimension {dim}", line=1)
    needed = 1 + nv + nc + nbf
    if len(text) < needed:
        raise MeshFormatError(f"file truncated, expected {needed} lines", line=len(text) + 1)
    vertices = np.empty((nv, dim))
    for i in range(nv):
        lineno = 2 + i
        try:
            vals = [float(t) for t in text[lineno - 1].split()]
        except ValueError:
            raise MeshFormatError("expected floats", line=lineno) from None
        if len(vals) != dim:
            raise MeshFormatError(f"expected {dim} coordinates", line=lineno)
        vertices[i] = vals
    start = 2 + nv
    cells = np.array([ints(start + i, dim + 1) for i in range(nc)], dtype=np.int64).reshape(nc, dim + 1)
    start += nc
    rows = np.array([ints(start + i, dim + 1) for i in range(nbf)], dtype=np.int64).reshape(nbf, dim + 1)
    try:
        return SimplicialMesh(vertices, cells, rows[:, :dim], rows[:, dim], name=Path(path).stem)
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from exc


_VTK_CELL_TYPE = {2: 5, 3: 10}


def export_vtk(mesh: SimplicialMesh, nodal_field=None, path="out.vtk", name="E") -> None:
    """Write mesh (and optionally a nodal vector field) as legacy ASCII VTK 3.0."""
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, :mesh.dim] = mesh.vertices
    k = mesh.dim + 1
    out = ["# vtk DataFile Version 3.0", mesh.name, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_vertices} double"]
    out += [f"{p[0]!r} {p[1]!r} {p[2]!r}" for p in pts.tolist()]
    out.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}")
    out += [f"{k} " + " ".join(map(str, c)) for c in mesh.cells.tolist()]
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out += [str(_VTK_CELL_TYPE[mesh.dim])] * mesh.n_cells
    if nodal_field is not None:
        values = np.asarray(getattr(nodal_field, "values", nodal_field), dtype=float)
        values = values.reshape(mesh.n_vertices, -1)
        vec = np.zeros((mesh.n_vertices, 3))
        vec[:, :values.shape[1]] = values
        out += [f"POINT_DATA {mesh.n_vertices}", f"VECTORS {name} double"]
        out += [f"{v[0]!r} {v[1]!r} {v[2]!r}" for v in vec.tolist()]
    Path(path).write_text("\n".join(out) + "\n")
