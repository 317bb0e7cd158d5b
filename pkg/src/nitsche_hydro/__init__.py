"""High-order Lagrangian hydrodynamics with weakly imposed slip walls."""

from .diagnostics import SedovReference, conservation_report, sedov_reference_radius
from .fem import build_spaces
from .integrator import HydroState, StepControls, rk2_average_step, run
from .mesh import Mesh, make_cartesian, make_disc, make_square_with_hole, make_trapezoid
from .operators import BoundaryParams, HydroOperator
from .physics import IdealGas, ViscositySettings

__version__ = "0.1.0"

__all__ = [
    "BoundaryParams", "HydroOperator", "HydroState", "IdealGas", "Mesh", "SedovReference",
    "StepControls", "ViscositySettings", "build_spaces", "conservation_report",
    "make_cartesian", "make_disc", "make_square_with_hole", "make_trapezoid",
    "rk2_average_step", "run", "sedov_reference_radius",
]
