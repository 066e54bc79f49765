"""Locate the empirical stability threshold of the leapfrog scheme."""
from p1maxwell.cli import cfl_sweep
from p1maxwell.mesh import build_disk_mesh
from p1maxwell.solver import SchemeOperators
from p1maxwell.verify import radial_permittivity

ops = SchemeOperators.assemble(build_disk_mesh(2), radial_permittivity(2))
tau_s, rows, threshold = cfl_sweep(ops, n_steps=400, seed=0)
print(f"tau_spectral = {tau_s:.6f}")
for row in rows:
    print(f"   {row[0]:.4f} x tau_spectral: {'stable' if row[1] else 'unstable'}")
print(f"stability threshold = {threshold:.4f} x tau_spectral")
