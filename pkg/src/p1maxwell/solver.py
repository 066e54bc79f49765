"""Explicit leapfrog time stepping with lumped masses and absorbing boundary terms.

With M the eps_h-weighted lumped mass, B the lumped boundary mass and
A = stiffness + weighted_div - div_div, one step reads

    (M/tau^2 + B/(2 tau)) e^{k+1} = (2M/tau^2) e^k - (M/tau^2 - B/(2 tau)) e^{k-1}
                                    - A e^k + F^k

and only needs a diagonal scaling, never a linear solve.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import (assemble_boundary_lumped_mass, assemble_div_div,
                       assemble_lumped_mass, assemble_stiffness,
                       assemble_weighted_div, spmv)
from .fespace import NodalVectorField, PermittivityField
from .mesh import SimplicialMesh

logger = logging.getLogger(__name__)


class InstabilityError(RuntimeError):
    """The discrete solution blew up (non-finite values or runaway energy)."""

    def __init__(self, message, k=None, energy=None):
        super().__init__(message)
        self.k = k
        self.energy = energy


class ConvergenceFailure(RuntimeError):
    """Power iteration did not reach its tolerance; ``last`` holds the final estimate."""

    def __init__(self, message, last):
        super().__init__(message)
        self.last = last


@dataclass
class SchemeOperators:
    mesh: SimplicialMesh
    M: np.ndarray
    B: np.ndarray
    A: sp.csr_matrix
    stiffness: sp.csr_matrix
    lumped_unit: np.ndarray  # vertex-rule mass without eps
    load_points: np.ndarray
    load_scatter: sp.csr_matrix

    @classmethod
    def assemble(cls, mesh: SimplicialMesh, eps: PermittivityField, boundary=True):
        K = assemble_stiffness(mesh)
        A = (K + assemble_weighted_div(mesh, eps) - assemble_div_div(mesh)).tocsr()
        A.sort_indices()
        M = assemble_lumped_mass(mesh, eps)
        if np.any(M <= 0):
            raise ValueError("lumped mass must be strictly positive")
        B = assemble_boundary_lumped_mass(mesh) if boundary else np.zeros_like(M)
        points, scatter = _load_quadrature(mesh)
        return cls(mesh, M, B, A, K, assemble_lumped_mass(mesh), points, scatter)

    def without_boundary(self):
        return replace(self, B=np.zeros_like(self.B))


@dataclass
class SimulationState:
    """Two consecutive time levels: ``e_prev`` = e^{k-1}, ``e_curr`` = e^k."""

    k: int
    e_prev: np.ndarray
    e_curr: np.ndarray
    tau: float
    energy_history: list = field(default_factory=list)

    @property
    def t(self):
        return self.k * self.tau

    def snapshot(self):
        return SimulationState(self.k, self.e_prev.copy(), self.e_curr.copy(), self.tau,
                               list(self.energy_history))


@dataclass(frozen=True)
class StabilityConstants:
    eta: float
    theta: float
    rho: float
    beta: float
    nu: Optional[float]
    tau_cap: float  # 1 / (2 eta)


def stability_constants(eps: PermittivityField, T: float, inverse_constant=None) -> StabilityConstants:
    """Constants of the discrete energy bound and the time step caps."""
    if T <= 0:
        raise ValueError("T must be positive")
    a, b = eps.seminorm_1, eps.seminorm_2
    eta = 2 + a + 2 * b
    rho = T ** 2 * b
    beta = 4 * T * (2 + a + (2 + T ** 2) * b)
    nu = None
    if inverse_constant is not None:
        nu = inverse_constant * math.sqrt(1 + 3 * max(eps.sup_norm - 1, 0.0))
    return StabilityConstants(eta=eta, theta=a, rho=rho, beta=beta, nu=nu, tau_cap=1 / (2 * eta))


def max_generalized_eigenvalue(A, M, tol=1e-6, maxiter=50000, seed=0):
    """Largest eigenvalue of M^{-1} A by power iteration on M^{-1/2} A M^{-1/2}.

    The Rayleigh quotient is checked every 10 iterations. Its changes shrink
    geometrically, so the remaining error is estimated from the last two
    changes d1, d2 as d2 q / (1 - q) with q = d2 / d1; iteration stops once
    that estimate is below ``tol`` relative. When several eigenvalues sit
    within a relative gap much smaller than ``tol`` of the top (symmetric
    meshes produce such clusters), the result is accurate to the cluster
    width only, and lies on its low side.
    """
    s = 1 / np.sqrt(M)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(len(M))
    x /= np.linalg.norm(x)
    lam_old = None
    changes = []
    lam = 0.0
    for it in range(1, maxiter + 1):
        y = s * (A @ (s * x))
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
        if it % 10:
            continue
        if lam_old is not None:
            changes.append(abs(lam - lam_old))
            if changes[-1] <= 1e-15 * abs(lam):
                return lam
            if len(changes) >= 4:
                # slowest recent contraction, to be safe against lucky steps
                q = max(b / a if a > 0 else 1.0 for a, b in zip(changes[-4:], changes[-3:]))
                if q < 1 and changes[-1] * q / (1 - q) <= tol * abs(lam):
                    return lam
        lam_old = lam
    raise ConvergenceFailure(f"power iteration stalled after {maxiter} iterations", lam)


def spectral_time_step(ops: SchemeOperators, tol=1e-6) -> float:
    """Leapfrog limit 2 / sqrt(lambda_max(M^{-1} A))."""
    return 2.0 / math.sqrt(max_generalized_eigenvalue(ops.A, ops.M, tol=tol))


def calibrate_inverse_constant(eps: PermittivityField, level=1) -> float:
    """Inverse-inequality constant anchored on the coarsest disk mesh.

    C = h_min * sqrt(lambda_max) / sqrt(1 + 3 ||eps - 1||_inf)
    """
    from .mesh import build_disk_mesh

    mesh = build_disk_mesh(level)
    ops = SchemeOperators.assemble(mesh, eps)
    lam = max_generalized_eigenvalue(ops.A, ops.M)
    return mesh.h_min * math.sqrt(lam) / math.sqrt(1 + 3 * max(eps.sup_norm - 1, 0.0))


def cfl_bound(ops: SchemeOperators, mesh: SimplicialMesh, eps: PermittivityField,
              inverse_constant=None):
    """Return ``(tau_theory, tau_spectral)``.

    ``tau_theory = h_min / nu`` with ``nu = C sqrt(1 + 3 ||eps - 1||_inf)``; C is
    calibrated on the level-1 disk mesh when not given.
    """
    if inverse_constant is None:
        inverse_constant = calibrate_inverse_constant(eps)
    nu = inverse_constant * math.sqrt(1 + 3 * max(eps.sup_norm - 1, 0.0))
    return mesh.h_min / nu, spectral_time_step(ops)


# fraction of the way from each vertex to the cell centroid at which the
# source is sampled, i.e. its one-sided limit from inside the cell
_INSIDE = 1e-9


def _load_quadrature(mesh):
    d = mesh.dim
    corners = mesh.vertices[mesh.cells]
    points = corners + _INSIDE * (mesh.centroids[:, None, :] - corners)
    n = mesh.cells.size
    weights = np.repeat(mesh.volumes / (d + 1), d + 1)
    scatter = sp.csr_matrix((weights, (mesh.cells.ravel(), np.arange(n))),
                            shape=(mesh.n_vertices, n))
    return points.reshape(-1, d), scatter


def lumped_load(ops: SchemeOperators, source, t) -> np.ndarray:
    """Vertex-rule load vector (f, v), assembled element by element.

    Each element contributes |K|/(d+1) f at its vertices, with f taken as the
    limit from inside K. For continuous f this equals the unweighted lumped
    mass times the nodal values; for f that jumps across mesh lines it keeps
    the rule second-order accurate.
    """
    f = np.asarray(source(ops.load_points, t), dtype=float).reshape(len(ops.load_points), -1)
    return (ops.load_scatter @ f).ravel()


def _as_flat(field_or_array):
    return np.array(getattr(field_or_array, "values", field_or_array), dtype=float).ravel()


def initialize(e0h, e1h, tau: float) -> SimulationState:
    """e^0 = e0h, e^1 = e^0 + tau * e1h."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    m0, m1 = getattr(e0h, "mesh", None), getattr(e1h, "mesh", None)
    if m0 is not None and m1 is not None and m0 is not m1:
        raise ValueError("initial fields live on different meshes")
    e0, e1 = _as_flat(e0h), _as_flat(e1h)
    if e0.shape != e1.shape:
        raise ValueError("initial fields have different sizes")
    return SimulationState(k=1, e_prev=e0, e_curr=e0 + tau * e1, tau=float(tau))


def energy(state: SimulationState, ops: SchemeOperators) -> float:
    """||(e^k - e^{k-1})/tau||^2 in the lumped eps_h norm plus ||grad e^k||^2 + ||grad e^{k-1}||^2."""
    v = (state.e_curr - state.e_prev) / state.tau
    K = ops.stiffness
    return float(v @ (ops.M * v) + state.e_curr @ (K @ state.e_curr)
                 + state.e_prev @ (K @ state.e_prev))


def step(state: SimulationState, ops: SchemeOperators, source=None) -> SimulationState:
    """Advance one leapfrog step; the load is evaluated at t = k tau."""
    if state.k < 1:
        raise ValueError("state must start at k >= 1")
    tau = state.tau
    mt = ops.M / tau ** 2
    bt = ops.B / (2 * tau)
    # overflow shows up as non-finite values, checked right below
    with np.errstate(invalid="ignore", over="ignore"):
        rhs = 2 * mt * state.e_curr - (mt - bt) * state.e_prev - spmv(ops.A, state.e_curr)
        if source is not None:
            rhs += lumped_load(ops, source, state.k * tau)
        e_next = rhs / (mt + bt)
    if not np.all(np.isfinite(e_next)):
        raise InstabilityError(f"non-finite values at step k={state.k + 1}", k=state.k + 1)
    new = SimulationState(state.k + 1, state.e_curr, e_next, tau, state.energy_history)
    new.energy_history.append(energy(new, ops))
    return new


def n_steps_for(T: float, tau: float) -> int:
    """Number N of intervals with N * tau = T; raises if tau does not divide T."""
    n = T / tau
    N = round(n)
    if N < 1 or abs(n - N) > 1e-9 * max(1.0, n):
        raise ValueError(f"tau={tau!r} does not divide T={T!r}")
    return N


def run(ops: SchemeOperators, state: SimulationState, T: float | None = None,
        source=None, callbacks: Iterable[Callable] = (), n_steps: int | None = None,
        blowup_factor: float = 1e6) -> SimulationState:
    """March from ``state`` (k = 1) up to k = N.

    N is T / tau, or ``n_steps`` when given. Callbacks receive the state at
    k = 1 and after every step. The run aborts with InstabilityError when the
    energy exceeds ``blowup_factor`` times the first nonzero energy seen.
    """
    N = n_steps if n_steps is not None else n_steps_for(T, state.tau)
    callbacks = list(callbacks)
    if not state.energy_history:
        state.energy_history.append(energy(state, ops))
    ref = next((e for e in state.energy_history if e > 0), None)
    for cb in callbacks:
        cb(state)
    while state.k < N:
        state = step(state, ops, source)
        e = state.energy_history[-1]
        if ref is None and e > 0:
            ref = e
        if ref is not None and (not math.isfinite(e) or e > blowup_factor * ref):
            raise InstabilityError(
                f"energy {e:.3e} exceeds {blowup_factor:g} x reference {ref:.3e} at k={state.k}",
                k=state.k, energy=e)
        for cb in callbacks:
            cb(state)
    return state


class EnergyLog:
    """Callback recording (k, t, energy[, extra columns]) rows, written as CSV."""

    def __init__(self, extra: Callable | None = None, extra_names=()):
        self.rows = []
        self.extra = extra
        self.extra_names = tuple(extra_names)

    def __call__(self, state):
        row = [state.k, state.t, state.energy_history[-1]]
        if self.extra is not None:
            row += list(self.extra(state))
        self.rows.append(row)

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "energy", *self.extra_names])
            for row in self.rows:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
