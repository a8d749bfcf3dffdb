"""Meshfree surface differential operators and PDE solvers on point clouds.

The package assembles sparse high-order approximations of the surface
gradient and Laplace-Beltrami operators on scattered nodes lying on a
smooth closed surface, using polyharmonic-spline kernels augmented with
an adaptively selected orthonormal polynomial basis.  On top of the
operators it provides explicit, implicit and implicit-explicit time
steppers and a small set of transport and reaction-diffusion test
problems with a convergence harness.
"""

__version__ = "0.1.0"

from . import geometry, linalg, polybasis, problems, rbf_assembly, timestepping
from .exceptions import (
    BasisConstructionError,
    ConfigurationError,
    DivergenceError,
    NodeFileError,
    SamplingError,
    SingularMatrixError,
    StencilAssemblyError,
    SurfpdeError,
)

__all__ = [
    "geometry",
    "linalg",
    "polybasis",
    "problems",
    "rbf_assembly",
    "timestepping",
    "SurfpdeError",
    "ConfigurationError",
    "NodeFileError",
    "SamplingError",
    "SingularMatrixError",
    "StencilAssemblyError",
    "BasisConstructionError",
    "DivergenceError",
    "__version__",
]
