"""Adaptive finite elements driven by polynomial preserving recovery."""

__version__ = "0.1.0"

from .mesh import Mesh, MeshError, MeshRefiner, Region, VertexMarker, bisect, generate_crack_domain, generate_uniform  # noqa: E402,F401
from .fespace import FeSpace, NodalField, interpolate  # noqa: E402,F401
from .assembly import ProblemSpec, solve_problem  # noqa: E402,F401
from .recovery import recover_gradient, recover_hessian, recover_interface, recover_simple_average  # noqa: E402,F401
from .adaptivity import AdaptiveConfig, adapt, dorfler_mark, estimate  # noqa: E402,F401
from .benchmarks import catalog  # noqa: E402,F401
