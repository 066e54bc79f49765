"""One manufactured-solution run with an energy and error log."""
from p1maxwell.fespace import interpolate
from p1maxwell.mesh import build_disk_mesh
from p1maxwell.solver import EnergyLog, SchemeOperators, initialize, run
from p1maxwell.verify import ErrorTracker, ManufacturedCase, reference_tau

level, case = 3, ManufacturedCase(m=3)
mesh = build_disk_mesh(level)
ops = SchemeOperators.assemble(mesh, case.eps)
tau = reference_tau(level)
state = initialize(interpolate(case.initial_data, mesh), interpolate(case.initial_velocity, mesh), tau)
tracker = ErrorTracker(mesh, case, tau)
log = EnergyLog()
state = run(ops, state, case.T, source=case.source, callbacks=[tracker, log])

print(f"{len(log.rows)} time levels, tau = {tau}")
for k, t, e in log.rows[:: max(1, len(log.rows) // 8)]:
    print(f"k={k:4d} t={t:.4f} energy={e:.6e}")
e1, e2, e3 = tracker.norms()
print(f"relative errors: e1 = {e1:.4e}  e2 = {e2:.4e}  e3 = {e3:.4e}")
