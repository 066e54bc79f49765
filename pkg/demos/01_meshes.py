"""Build the square and disk mesh family and export one level to VTK."""
import sys
import tempfile
from pathlib import Path

import numpy as np

from p1maxwell.mesh import build_disk_mesh, build_square_mesh, export_vtk, load_mesh, save_mesh

print(" l   cells  vertices   h_max    h_min   h_max/h_min  perimeter")
for level in range(1, 6):
    disk = build_disk_mesh(level)
    perimeter = disk.facet_measures.sum()
    print(f"{level:2d} {disk.n_cells:7d} {disk.n_vertices:9d} {disk.h_max:8.4f} {disk.h_min:8.4f}"
          f" {disk.h_max / disk.h_min:11.3f} {perimeter:10.6f}")
print(f"2*pi = {2 * np.pi:.6f}")

square = build_square_mesh(2)
print("square l=2 area:", square.volumes.sum())

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
out.mkdir(parents=True, exist_ok=True)
disk = build_disk_mesh(2)
save_mesh(disk, out / "disk_l2.mesh")
assert np.array_equal(load_mesh(out / "disk_l2.mesh").vertices, disk.vertices)
export_vtk(disk, None, out / "disk_l2.vtk")
print("wrote", out / "disk_l2.mesh", "and", out / "disk_l2.vtk")
