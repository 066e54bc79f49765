import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse.linalg

import p1maxwell.solver as solver
from p1maxwell.cli import forced_steps
from p1maxwell.fespace import NodalVectorField, PermittivityField, interpolate
from p1maxwell.mesh import build_disk_mesh, build_square_mesh
from p1maxwell.solver import (ConvergenceFailure, EnergyLog, InstabilityError,
                              SchemeOperators, SimulationState, calibrate_inverse_constant,
                              cfl_bound, energy, initialize, lumped_load,
                              max_generalized_eigenvalue, n_steps_for, run,
                              spectral_time_step, stability_constants, step)
from p1maxwell.verify import ManufacturedCase, reference_tau, radial_permittivity


def smooth_source(x, t):
    return np.c_[np.sin(x[:, 0] + t), x[:, 0] * x[:, 1] * np.cos(t)]


def dense_operators(mesh, eps):
    """Dense M, B, A built cell by cell with plain loops (independent oracle)."""
    n = 2 * mesh.n_vertices
    M, B, A = np.zeros(n), np.zeros(n), np.zeros((n, n))
    for cell in mesh.cells:
        p = mesh.vertices[cell]
        T = np.array([p[1] - p[0], p[2] - p[0]])
        area = abs(np.linalg.det(T)) / 2
        inv = np.linalg.inv(T)
        g = np.array([-inv[:, 0] - inv[:, 1], inv[:, 0], inv[:, 1]])  # grad lambda_i
        cen = p.mean(axis=0)
        ec = eps.value(cen[None])[0]
        geps = eps.gradient(p)  # at the three vertices
        for a_loc, a in enumerate(cell):
            for c in range(2):
                M[2 * a + c] += ec * area / 3
        for j_loc, j in enumerate(cell):          # test function
            for b in range(2):
                row = 2 * j + b
                for i_loc, i in enumerate(cell):  # trial function
                    for a in range(2):
                        col = 2 * i + a
                        val = 0.0
                        if a == b:
                            val += area * g[i_loc] @ g[j_loc]
                        div_uv = g[i_loc][a] * g[j_loc][b]
                        val += (ec - 1) * area * div_uv
                        # (grad eps . u, div v) by the vertex rule: u = phi_i e_a
                        val += area / 3 * geps[i_loc][a] * g[j_loc][b]
                        A[row, col] += val
    for f in mesh.boundary_facets:
        length = np.linalg.norm(mesh.vertices[f[0]] - mesh.vertices[f[1]])
        for v in f:
            B[2 * v:2 * v + 2] += length / 2
    return M, B, A


def dense_load(mesh, source, t):
    F = np.zeros(2 * mesh.n_vertices)
    vals = source(mesh.vertices, t)
    for cell, area in zip(mesh.cells, mesh.volumes):
        for v in cell:
            F[2 * v:2 * v + 2] += area / 3 * vals[v]
    return F


@pytest.mark.parametrize("eps", [PermittivityField.constant(1.0), radial_permittivity(3)],
                         ids=["eps1", "radial"])
def test_step_matches_dense_oracle(eps):
    mesh = build_square_mesh(1)
    case = ManufacturedCase(m=2)
    tau = 0.0125
    ops = SchemeOperators.assemble(mesh, eps)
    M, B, A = dense_operators(mesh, eps)
    np.testing.assert_allclose(ops.M, M, rtol=1e-14)
    np.testing.assert_allclose(ops.B, B, rtol=1e-14)
    np.testing.assert_allclose(ops.A.toarray(), A, atol=1e-13)
    e0 = interpolate(case.initial_data, mesh)
    e1 = interpolate(case.initial_velocity, mesh)
    state = initialize(e0, e1, tau)
    new = step(state, ops, smooth_source)
    D = M / tau ** 2 + B / (2 * tau)
    rhs = (2 * M / tau ** 2 * state.e_curr - (M / tau ** 2 - B / (2 * tau)) * state.e_prev
           - A @ state.e_curr + dense_load(mesh, smooth_source, tau))
    np.testing.assert_allclose(new.e_curr, rhs / D, rtol=0, atol=1e-12)
    assert new.k == 2 and np.array_equal(new.e_prev, state.e_curr)


def test_load_jumping_source_uses_inside_values():
    # a source that is 1 on x > 0 and 0 elsewhere: vertices on x = 0 get
    # only the share of the cells to the right
    mesh = build_square_mesh(1)
    ops = SchemeOperators.assemble(mesh, PermittivityField.constant(1.0))
    F = lumped_load(ops, lambda x, t: np.c_[(x[:, 0] > 0).astype(float), np.zeros(len(x))], 0.0)
    expected = np.zeros(mesh.n_vertices)
    for cell, area in zip(mesh.cells, mesh.volumes):
        if mesh.vertices[cell, 0].mean() > 0:
            expected[cell] += area / 3
    np.testing.assert_allclose(F[0::2], expected, atol=1e-15)
    assert F[0::2].sum() == pytest.approx(2.0)


def test_zero_data_stays_zero(disk2):
    ops = SchemeOperators.assemble(disk2, radial_permittivity(2))
    z = NodalVectorField.zeros(disk2)
    state = run(ops, initialize(z, z, 0.00625), 0.5)
    assert state.k == 80
    assert not state.e_curr.any() and not any(state.energy_history)


def test_initialize():
    mesh = build_disk_mesh(1)
    case = ManufacturedCase(m=2)
    e0 = interpolate(case.initial_data, mesh)
    same = initialize(e0, NodalVectorField.zeros(mesh), 0.1)
    assert np.array_equal(same.e_curr, same.e_prev) and same.k == 1
    tau = reference_tau(1)
    s = initialize(e0, interpolate(case.initial_velocity, mesh), tau)
    x = mesh.vertices
    np.testing.assert_array_equal(
        s.e_curr.reshape(-1, 2), case.initial_data(x) + tau * case.initial_velocity(x))
    with pytest.raises(ValueError):
        initialize(e0, e0, 0.0)
    with pytest.raises(ValueError):
        initialize(e0, NodalVectorField.zeros(build_disk_mesh(2)), 0.1)


def test_energy_examples(disk1):
    ops = SchemeOperators.assemble(disk1, radial_permittivity(2))
    z = np.zeros(2 * disk1.n_vertices)
    assert energy(SimulationState(1, z, z, 0.1), ops) == 0.0
    c = np.tile([2.0, -1.0], disk1.n_vertices)
    assert abs(energy(SimulationState(1, c, c, 0.1), ops)) < 1e-12


def test_energy_bounded_on_level3():
    case = ManufacturedCase(m=2)
    mesh = build_disk_mesh(3)
    ops = SchemeOperators.assemble(mesh, case.eps)
    state = initialize(interpolate(case.initial_data, mesh),
                       interpolate(case.initial_velocity, mesh), reference_tau(3))
    log = EnergyLog()
    run(ops, state, case.T, source=case.source, callbacks=[log])
    E = np.array([row[2] for row in log.rows])
    assert np.all(np.isfinite(E))
    assert E[9:].max() <= 3 * E[9]  # row 9 is k = 10


def test_reversibility():
    case = ManufacturedCase(m=3)
    mesh = build_disk_mesh(2)
    ops = SchemeOperators.assemble(mesh, case.eps).without_boundary()
    start = initialize(interpolate(case.initial_data, mesh),
                       interpolate(case.initial_velocity, mesh), 0.005)
    fwd = run(ops, start.snapshot(), n_steps=51)
    back = SimulationState(1, fwd.e_curr, fwd.e_prev, fwd.tau)
    back = run(ops, back, n_steps=51)
    scale = np.abs(start.e_curr).max()
    assert np.abs(back.e_curr - start.e_prev).max() <= 1e-10 * scale
    assert np.abs(back.e_prev - start.e_curr).max() <= 1e-10 * scale


def test_run_step_counts():
    case = ManufacturedCase(m=2)
    mesh = build_disk_mesh(1)
    ops = SchemeOperators.assemble(mesh, case.eps)
    e0 = interpolate(case.initial_data, mesh)
    e1 = interpolate(case.initial_velocity, mesh)
    one = run(ops, initialize(e0, e1, 0.5), 0.5)
    assert one.k == 1 and len(one.energy_history) == 1
    seen = []
    full = run(ops, initialize(e0, e1, reference_tau(1)), 0.5, source=case.source,
               callbacks=[lambda s: seen.append(s.k)])
    assert full.k == 40 and seen == list(range(1, 41))
    assert n_steps_for(0.5, 0.0125) == 40
    with pytest.raises(ValueError):
        n_steps_for(0.5, 0.3)


def test_run_aborts_far_beyond_cfl():
    case = ManufacturedCase(m=2)
    mesh = build_disk_mesh(2)
    ops = SchemeOperators.assemble(mesh, case.eps)
    tau = 50 * spectral_time_step(ops)
    state = initialize(interpolate(case.initial_data, mesh),
                       interpolate(case.initial_velocity, mesh), tau)
    with pytest.raises(InstabilityError) as info:
        run(ops, state, source=case.source, n_steps=forced_steps(case.T, tau))
    assert info.value.k is not None and info.value.k <= forced_steps(case.T, tau)


def test_nonfinite_state_flagged(disk1):
    ops = SchemeOperators.assemble(disk1, PermittivityField.constant(1.0))
    bad = np.zeros(2 * disk1.n_vertices)
    bad[3] = np.inf
    with pytest.raises(InstabilityError):
        step(SimulationState(1, bad, bad, 0.01), ops)


def test_cfl_dichotomy_level2():
    case = ManufacturedCase(m=2)
    mesh = build_disk_mesh(2)
    ops = SchemeOperators.assemble(mesh, case.eps)
    ts = spectral_time_step(ops)
    e0 = interpolate(case.initial_data, mesh)
    e1 = interpolate(case.initial_velocity, mesh)
    tau = case.T / math.ceil(case.T / ts)
    ok = run(ops, initialize(e0, e1, tau), case.T, source=case.source)
    assert max(ok.energy_history) <= 10 * ok.energy_history[0]
    tau = 2.5 * ts
    with pytest.raises(InstabilityError):
        run(ops, initialize(e0, e1, tau), source=case.source,
            n_steps=forced_steps(case.T, tau))


def test_step_is_explicit(monkeypatch, disk2):
    def forbidden(*a, **k):
        raise AssertionError("linear solve called")
    for mod, name in ((np.linalg, "solve"), (scipy.linalg, "solve"),
                      (scipy.sparse.linalg, "spsolve"), (scipy.sparse.linalg, "splu")):
        monkeypatch.setattr(mod, name, forbidden)
    calls = []
    real = solver.spmv
    monkeypatch.setattr(solver, "spmv", lambda a, x: calls.append(1) or real(a, x))
    case = ManufacturedCase(m=2)
    ops = SchemeOperators.assemble(disk2, case.eps)
    state = initialize(interpolate(case.initial_data, disk2),
                       interpolate(case.initial_velocity, disk2), 0.00625)
    for _ in range(5):
        state = step(state, ops, case.source)
    assert len(calls) == 5


def test_eps_one_blocks_decouple(disk2):
    A = SchemeOperators.assemble(disk2, PermittivityField.constant(1.0)).A.toarray()
    assert np.abs(A[0::2, 1::2]).max() <= 1e-12
    assert np.abs(A[1::2, 0::2]).max() <= 1e-12
    np.testing.assert_allclose(A[0::2, 0::2], A[1::2, 1::2], atol=1e-12)


def test_stability_constants():
    c = stability_constants(PermittivityField.constant(1.0), 0.5)
    assert (c.eta, c.theta, c.rho, c.beta) == (2, 0, 0, 4)
    assert c.tau_cap == 0.25
    a, b = 1.7, 3.2
    eps = PermittivityField(lambda x: x, lambda x: x, 2.0, a, b)
    c = stability_constants(eps, 0.5)
    assert c.beta == pytest.approx(2 * (2 + a + 2.25 * b))
    assert c.rho == pytest.approx(0.25 * b)
    assert c.eta == pytest.approx(2 + a + 2 * b)
    with pytest.raises(ValueError):
        stability_constants(eps, 0.0)


def test_stability_constants_radial_m2():
    # closed forms for m = 2: eps' = -16 r (1 - 4r^2), eps'' = 16 (12 r^2 - 1)
    r = np.linspace(0, 0.5, 100001)
    a = np.abs(16 * r * (1 - 4 * r ** 2)).max()
    b = np.abs(16 * (12 * r ** 2 - 1)).max()
    eps = radial_permittivity(2)
    assert eps.seminorm_1 == pytest.approx(a, rel=1e-8)
    assert eps.seminorm_2 == pytest.approx(b, rel=1e-8)
    c = stability_constants(eps, 0.5)
    assert c.theta == pytest.approx(a, rel=1e-8)


@pytest.mark.parametrize("level", [1, 2])
def test_power_iteration_matches_dense(level):
    ops = SchemeOperators.assemble(build_disk_mesh(level), radial_permittivity(2))
    lam = max_generalized_eigenvalue(ops.A, ops.M)
    dense = np.linalg.eigvals(ops.A.toarray() / ops.M[:, None])
    assert lam == pytest.approx(dense.real.max(), rel=2e-6)


def test_power_iteration_on_clustered_top():
    # level 3 has eigenvalues within 2e-5 (relative) of the top: the estimate
    # lands inside that cluster, from below
    ops = SchemeOperators.assemble(build_disk_mesh(3), radial_permittivity(2))
    lam = max_generalized_eigenvalue(ops.A, ops.M)
    top = np.sort(np.linalg.eigvals(ops.A.toarray() / ops.M[:, None]).real)[::-1]
    assert top[0] * (1 - 1e-4) <= lam <= top[0] * (1 + 1e-9)
    with pytest.raises(ConvergenceFailure) as info:
        max_generalized_eigenvalue(ops.A, ops.M, tol=1e-15, maxiter=20)
    assert info.value.last > 0


def test_cfl_bounds_halve():
    eps = radial_permittivity(2)
    C = calibrate_inverse_constant(eps)
    bounds = []
    for l in (3, 4):
        mesh = build_disk_mesh(l)
        bounds.append(cfl_bound(SchemeOperators.assemble(mesh, eps), mesh, eps, C))
    assert bounds[0][0] / bounds[1][0] == pytest.approx(2, rel=0.05)
    assert bounds[0][1] / bounds[1][1] == pytest.approx(2, rel=0.05)
    mesh = build_disk_mesh(1)
    ops = SchemeOperators.assemble(mesh, eps)
    theory, spectral = cfl_bound(ops, mesh, eps)
    assert theory == pytest.approx(spectral / 2, rel=1e-9)  # calibration anchors l=1


def test_theory_bound_scales_with_contrast(disk1):
    one = PermittivityField.constant(1.0)
    two = radial_permittivity(2)  # sup 2
    ops = SchemeOperators.assemble(disk1, one)
    t1, _ = cfl_bound(ops, disk1, one, inverse_constant=3.0)
    t2, _ = cfl_bound(ops, disk1, two, inverse_constant=3.0)
    assert t1 / t2 == pytest.approx(2.0)
    assert stability_constants(two, 0.5, 3.0).nu == pytest.approx(6.0)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_published_steps_are_stable(m):
    eps = radial_permittivity(m)
    for l in range(1, 7):
        ops = SchemeOperators.assemble(build_disk_mesh(l), eps)
        assert reference_tau(l) <= spectral_time_step(ops)


def test_energy_log_csv(tmp_path, disk1):
    case = ManufacturedCase(m=2)
    ops = SchemeOperators.assemble(disk1, case.eps)
    log = EnergyLog(extra=lambda s: (s.k * 2.0,), extra_names=("twice",))
    run(ops, initialize(interpolate(case.initial_data, disk1),
                        interpolate(case.initial_velocity, disk1), 0.0125), 0.5,
        source=case.source, callbacks=[log])
    log.write(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "k,t,energy,twice"
    assert len(lines) == 41
    assert lines[-1].startswith("40,0.5,")
