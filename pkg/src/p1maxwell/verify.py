"""Manufactured rotating-field solution on the unit disk and the convergence study.

The exact field is e = (-x2, x1) v(r, t) with v = exp(r - 2t) / eps(r) and a
radial permittivity eps(r) = 1 + (1 - 4 r^2)^m for r < 1/2, eps = 1 beyond.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .fespace import (PermittivityField, interpolate, mesh_quadrature,
                      p1_evaluation_matrix, p1_gradient_matrix)
from .mesh import build_disk_mesh, expected_cells, reference_h
from .solver import InstabilityError, SchemeOperators, initialize, run

logger = logging.getLogger(__name__)

REFERENCE_LEVELS = range(1, 7)


def reference_tau(level: int) -> float:
    return 0.025 * 2.0 ** -level


def epsilon_derivatives(r, m: int):
    """eps(r), eps'(r), eps''(r) of the radial permittivity, vectorised in r."""
    r = np.asarray(r, dtype=float)
    # cutoff 1 - H(r - 1/2) with H(0) = 1/2: on the circle r = 1/2 (a ring of
    # mesh vertices) the discontinuous eps'' for m = 2 takes its midpoint value
    cut = np.where(r < 0.5, 1.0, np.where(r == 0.5, 0.5, 0.0))
    q = np.where(r <= 0.5, 1 - 4 * r * r, 0.0)
    eps = 1 + cut * q ** m
    d1 = cut * -8 * m * r * q ** (m - 1)
    d2 = cut * 8 * m * (8 * m * r * r - 4 * r * r - 1) * q ** (m - 2)
    return eps, d1, d2


def radial_permittivity(m: int) -> PermittivityField:
    """The radial eps family as a PermittivityField with its C^k constants.

    The derivative sup norms are taken over a fine grid on [0, 1/2], using
    the limits from inside at r = 1/2 (for m = 2, eps'' jumps there).
    """
    if m < 2:
        raise ValueError("m must be an integer >= 2")
    grid = np.linspace(0.0, 0.5, 200001)
    q = 1 - 4 * grid * grid
    d1 = -8 * m * grid * q ** (m - 1)
    d2 = 8 * m * (8 * m * grid * grid - 4 * grid * grid - 1) * q ** (m - 2)

    def value(x):
        return epsilon_derivatives(np.linalg.norm(x, axis=1), m)[0]

    def gradient(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=1)
        _, d1_, _ = epsilon_derivatives(r, m)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(r[:, None] > 0, d1_[:, None] * x / r[:, None], 0.0)
        return g

    return PermittivityField(value=value, gradient=gradient, sup_norm=2.0,
                             seminorm_1=float(np.abs(d1).max()),
                             seminorm_2=float(np.abs(d2).max()), label=f"radial-m{m}")


@dataclass(frozen=True)
class ManufacturedCase:
    m: int = 2
    T: float = 0.5

    @cached_property
    def eps(self) -> PermittivityField:
        return radial_permittivity(self.m)

    def _radial(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=-1)
        eps, d1, d2 = epsilon_derivatives(r, self.m)
        g = np.exp(r - 2 * t)
        v = g / eps
        v1 = (eps - d1) / eps ** 2 * g
        v2 = (eps ** 2 - 2 * eps * d1 - eps * d2 + 2 * d1 ** 2) / eps ** 3 * g
        return x, r, v, v1, v2

    def exact_solution(self, x, t=0.0):
        x, _, v, _, _ = self._radial(x, t)
        return np.stack([-x[..., 1] * v, x[..., 0] * v], axis=-1)

    def exact_time_derivative(self, x, t=0.0):
        return -2.0 * self.exact_solution(x, t)

    def exact_gradient(self, x, t=0.0):
        """Jacobian d e_i / d x_j, shape (..., 2, 2)."""
        x, r, v, v1, _ = self._radial(x, t)
        x1, x2 = x[..., 0], x[..., 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(r > 0, v1 / np.where(r > 0, r, 1.0), 0.0)
        jac = np.empty(x.shape[:-1] + (2, 2))
        jac[..., 0, 0] = -x1 * x2 * w
        jac[..., 0, 1] = -v - x2 * x2 * w
        jac[..., 1, 0] = v + x1 * x1 * w
        jac[..., 1, 1] = x1 * x2 * w
        return jac

    @staticmethod
    def time_factor(t):
        """e(x, t) = e(x, 0) * time_factor(t); the same holds for grad e and f."""
        return math.exp(-2.0 * t)

    def initial_data(self, x):
        return self.exact_solution(x, 0.0)

    def initial_velocity(self, x):
        return self.exact_time_derivative(x, 0.0)

    def source(self, x, t):
        """f = eps d_tt e - Laplacian e (div e vanishes); f(0) := 0."""
        x, r, v, v1, v2 = self._radial(x, t)
        x1, x2 = x[..., 0], x[..., 1]
        g = np.exp(r - 2 * t)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(r > 0, 3 * v1 / np.where(r > 0, r, 1.0), 0.0)
        lap1 = -x2 * c - x2 * v2
        lap2 = x1 * c + x1 * v2
        f = np.stack([-4 * x2 * g - lap1, 4 * x1 * g - lap2], axis=-1)
        f[r == 0] = 0.0
        return f


class ErrorTracker:
    """Run callback accumulating the three max-in-time relative errors.

    L2 integrals over the mesh use the degree-4 rule with the exact field
    evaluated at the quadrature points. The spatial parts are evaluated once
    and rescaled by ``case.time_factor``.
    """

    def __init__(self, mesh, case: ManufacturedCase, tau: float):
        self.mesh = mesh
        self.case = case
        self.tau = tau
        self.bary, pts, w = mesh_quadrature(mesh, "degree4")
        self.w = w[:, :, None]
        shape = pts.shape[:2]
        self._eval = p1_evaluation_matrix(mesh, self.bary)
        self._grad = p1_gradient_matrix(mesh)
        flat = pts.reshape(-1, mesh.dim)
        self.exact0 = case.exact_solution(flat, 0.0).reshape(*shape, -1)
        self.jac0 = case.exact_gradient(flat, 0.0).reshape(*shape, -1)
        self.dt0 = case.exact_time_derivative(flat, 0.0).reshape(*shape, -1)
        self.norms0 = (self._l2(self.exact0), self._l2(self.jac0), self._l2(self.dt0))
        self.err = np.zeros(3)
        self.ref = np.zeros(3)
        self.samples = [0, 0, 0]
        self.last = (np.nan, np.nan, np.nan)

    def _l2(self, values):
        return math.sqrt(float((self.w * values * values).sum()))

    def _at_points(self, u):
        u = np.asarray(u, dtype=float).reshape(self.mesh.n_vertices, -1)
        return (self._eval @ u).reshape(self.exact0.shape)

    def _value_errors(self, u, t):
        s = self.case.time_factor(t)
        uh = self._at_points(u)
        u = np.asarray(u, dtype=float).reshape(self.mesh.n_vertices, -1)
        # rows of _grad are (cell, direction); reorder to (cell, component, direction)
        g = (self._grad @ u).reshape(self.mesh.n_cells, self.mesh.dim, -1)
        gh = np.transpose(g, (0, 2, 1)).reshape(self.mesh.n_cells, 1, -1)
        return (self._l2(s * self.exact0 - uh), s * self.norms0[0],
                self._l2(s * self.jac0 - gh), s * self.norms0[1])

    def record(self, k, e_prev, e_curr):
        t = k * self.tau
        e1, r1, e2, r2 = self._value_errors(e_curr, t)
        self.err[:2] = np.maximum(self.err[:2], (e1, e2))
        self.ref[:2] = np.maximum(self.ref[:2], (r1, r2))
        self.samples[0] += 1
        self.samples[1] += 1
        inst3 = np.nan
        if k >= 2:
            th = (k - 0.5) * self.tau
            dq = (np.asarray(e_curr) - np.asarray(e_prev)) / self.tau
            s = self.case.time_factor(th)
            dh = self._at_points(dq)
            e3, r3 = self._l2(s * self.dt0 - dh), s * self.norms0[2]
            self.err[2] = max(self.err[2], e3)
            self.ref[2] = max(self.ref[2], r3)
            self.samples[2] += 1
            inst3 = e3 / r3
        self.last = (e1 / r1, e2 / r2, inst3)

    def __call__(self, state):
        self.record(state.k, state.e_prev, state.e_curr)

    def norms(self):
        if min(self.samples) == 0:
            raise ValueError("not enough time levels recorded for all three errors")
        return tuple(float(v) for v in self.err / self.ref)


def error_norms(trajectory, case: ManufacturedCase, mesh, tau: float):
    """(e1, e2, e3) for a trajectory [e^0, e^1, ..., e^N] of nodal arrays."""
    traj = [np.asarray(getattr(u, "values", u), dtype=float).ravel() for u in trajectory]
    if len(traj) < 3:
        raise ValueError("trajectory needs e^0, e^1 and at least e^2")
    tracker = ErrorTracker(mesh, case, tau)
    for k in range(1, len(traj)):
        tracker.record(k, traj[k - 1], traj[k])
    return tracker.norms()


@dataclass
class LevelResult:
    l: int
    nel: int
    nno: int
    h: float
    tau: float
    e1: float
    e2: float
    e3: float

    @property
    def errors(self):
        return (self.e1, self.e2, self.e3)


@dataclass
class ConvergenceReport:
    m: int
    levels: list = field(default_factory=list)
    tau_rule: str = "0.025*2^-l"
    mapping: str = "sup-norm rings to circles, arc-length proportional"

    def ratios(self, which: int):
        """Successive ratios e_{l-1}/e_l for error ``which`` in {1, 2, 3}; None for the first level."""
        errs = [lv.errors[which - 1] for lv in self.levels]
        return [None] + [a / b for a, b in zip(errs[:-1], errs[1:])]

    def level(self, l):
        return next(lv for lv in self.levels if lv.l == l)

    def slope(self, which: int, l_from=None, l_to=None):
        """Least-squares slope of log2(error) against log2(h)."""
        sel = [lv for lv in self.levels
               if (l_from is None or lv.l >= l_from) and (l_to is None or lv.l <= l_to)]
        x = np.log2([lv.h for lv in sel])
        y = np.log2([lv.errors[which - 1] for lv in sel])
        return float(np.polyfit(x, y, 1)[0])


def run_level(case: ManufacturedCase, level: int, tau: float | None = None,
              n_steps: int | None = None, callbacks=()):
    """Simulate one mesh level and return its LevelResult."""
    mesh = build_disk_mesh(level)
    assert mesh.n_cells == expected_cells(level)
    tau = reference_tau(level) if tau is None else tau
    ops = SchemeOperators.assemble(mesh, case.eps)
    e0 = interpolate(case.initial_data, mesh)
    e1 = interpolate(case.initial_velocity, mesh)
    state = initialize(e0, e1, tau)
    tracker = ErrorTracker(mesh, case, tau)
    try:
        run(ops, state, case.T, source=case.source, callbacks=[tracker, *callbacks],
            n_steps=n_steps)
    except InstabilityError as exc:
        exc.level = level
        raise
    e1_, e2_, e3_ = tracker.norms()
    return LevelResult(level, mesh.n_cells, mesh.n_vertices, reference_h(level), tau,
                       e1_, e2_, e3_)


def convergence_study(m: int, l_min: int = 1, l_max: int = 6, T: float = 0.5,
                      executor=None, tau: float | None = None,
                      n_steps: int | None = None) -> ConvergenceReport:
    """Run levels l_min..l_max with tau_l = 0.025 * 2^-l.

    ``tau`` replaces the per-level rule by one fixed step (``n_steps`` then
    overrides T / tau). ``executor`` (e.g. a ThreadPoolExecutor) runs levels
    concurrently; results are ordered by level either way.
    """
    if not 1 <= l_min <= l_max:
        raise ValueError("need 1 <= l_min <= l_max")
    if l_max > max(REFERENCE_LEVELS):
        logger.warning("levels above %d are beyond the published range", max(REFERENCE_LEVELS))
    case = ManufacturedCase(m=m, T=T)
    levels = range(l_min, l_max + 1)
    def one(l):
        return run_level(case, l, tau=tau, n_steps=n_steps)

    results = [one(l) for l in levels] if executor is None else list(executor.map(one, levels))
    return ConvergenceReport(m=m, levels=results,
                             tau_rule="0.025*2^-l" if tau is None else f"fixed {tau!r}")


REPORT_COLUMNS = ["l", "nel", "nno", "e1", "ratio1", "e2", "ratio2", "e3", "ratio3"]


def _fmt(x):
    return "" if x is None else f"{x:.10e}"


def write_report_csv(report: ConvergenceReport, path):
    ratios = [report.ratios(i) for i in (1, 2, 3)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for n, lv in enumerate(report.levels):
            w.writerow([lv.l, lv.nel, lv.nno,
                        _fmt(lv.e1), _fmt(ratios[0][n]),
                        _fmt(lv.e2), _fmt(ratios[1][n]),
                        _fmt(lv.e3), _fmt(ratios[2][n])])


def read_report_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_rate_plot_data(report: ConvergenceReport, path):
    """log2(h_l) against log2 of each error, one row per level."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "log2_h", "log2_e1", "log2_e2", "log2_e3"])
        for lv in report.levels:
            w.writerow([lv.l, _fmt(math.log2(lv.h))] + [_fmt(math.log2(e)) for e in lv.errors])
