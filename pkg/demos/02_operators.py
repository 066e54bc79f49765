"""Assemble the scheme operators and look at their structure."""
import numpy as np

from p1maxwell.assembly import assemble_div_div, assemble_weighted_div
from p1maxwell.fespace import PermittivityField
from p1maxwell.mesh import build_disk_mesh
from p1maxwell.solver import SchemeOperators, cfl_bound, stability_constants
from p1maxwell.verify import radial_permittivity

mesh = build_disk_mesh(3)
eps = radial_permittivity(2)
ops = SchemeOperators.assemble(mesh, eps)
print(f"mesh: {mesh.n_cells} cells, {mesh.n_vertices} vertices, {ops.A.shape[0]} unknowns")
print(f"A: {ops.A.nnz} nonzeros, asymmetry |A - A^T|_max = {abs(ops.A - ops.A.T).max():.3e}")
print(f"lumped mass sum = {ops.M.sum():.6f} (about 2 * integral of eps)")
print(f"boundary mass sum = {ops.B.sum():.6f} (about 2 * 2pi = {4 * np.pi:.6f})")

# with eps = 1 the weighted divergence and the div-div term cancel
one = PermittivityField.constant(1.0)
diff = assemble_weighted_div(mesh, one) - assemble_div_div(mesh)
print(f"eps = 1: |weighted_div - div_div|_max = {abs(diff).max():.3e}")

c = stability_constants(eps, T=0.5)
print(f"eta = {c.eta:.4f}, theta = {c.theta:.4f}, rho = {c.rho:.4f}")
tau_theory, tau_spectral = cfl_bound(ops, mesh, eps)
print(f"tau_theory = {tau_theory:.5f}, tau_spectral = {tau_spectral:.5f}, tau_3 = {0.025 / 8:.5f}")
