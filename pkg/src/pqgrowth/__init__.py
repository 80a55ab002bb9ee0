"""Numerical laboratory for convex variational integrals with (p,q)-growth."""
from .errors import InternalError, InvalidArgument, OutOfRange, SolverDiagnostics, UnsupportedFlavor
from .integrand import GrowthParams, Integrand, check_hypothesis, example_library, regularize
from .mesh import DiscreteField, Mesh, energy, gradient, interpolate
from .covering import partition_of_unity, wb_enlarge, whitney
from .mollify import ApproximantConfig, wb_approximant
from .solver import SolveOptions, minimize, regularization_path
from .besov import ConeSpec, dq_seminorm
from .lavrentiev import estimate_gap, relaxed_energy_estimate, sequence_criterion

__version__ = "0.1.0"
