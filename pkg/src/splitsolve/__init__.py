"""Operator-splitting and multistep solvers for guided probability-flow ODEs.

The numeric kernels run under numba when it is installed; set
``SPLITSOLVE_NUMBA=0`` to force the pure-numpy path.
"""

from .kernels import BACKEND
from .schedule import SigmaSchedule, make_log_linear_schedule
from .fields import (
    GaussianMixture,
    MixtureField,
    ClassPotential,
    LinearObservation,
    ObservationPotential,
    ToyLinearField,
    toy_exact_solution,
)
from .solvers import MethodSpec, parse_method, plms_coefficients, glms_coefficients
from .splitting import SplitScheme, Trajectory, parse_scheme, solve
from .sampler import Problem, standard_problem, sweep
from .stability import stability_table
from .analysis import estimate_order, toy_error_study

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "SigmaSchedule",
    "make_log_linear_schedule",
    "GaussianMixture",
    "MixtureField",
    "ClassPotential",
    "LinearObservation",
    "ObservationPotential",
    "ToyLinearField",
    "toy_exact_solution",
    "MethodSpec",
    "parse_method",
    "plms_coefficients",
    "glms_coefficients",
    "SplitScheme",
    "Trajectory",
    "parse_scheme",
    "solve",
    "Problem",
    "standard_problem",
    "sweep",
    "stability_table",
    "estimate_order",
    "toy_error_study",
]
