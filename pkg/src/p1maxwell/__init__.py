"""Explicit P1 finite elements for the time-domain Maxwell electric-field system."""
from .mesh import (SimplicialMesh, build_square_mesh, build_disk_mesh, map_square_to_disk,
                   build_cube_mesh, load_mesh, save_mesh, export_vtk)
from .fespace import PermittivityField, NodalVectorField, interpolate
from .solver import (SchemeOperators, SimulationState, InstabilityError, initialize,
                     step, run, energy, cfl_bound, stability_constants)
from .verify import ManufacturedCase, convergence_study, radial_permittivity

__version__ = "0.1.0"
