"""Grid discretisations of nonlocal Waldenfels operators ``L = A + K``.

Mean exit times and escape probabilities (exterior Dirichlet problems), a nonlocal
Fokker-Planck solver, maximum-principle checks and a Monte Carlo path oracle.
"""
__version__ = "0.1.0"

from .errors import (ConfigurationError, DomainError, NonUniqueSolutionError, QuadratureError,
                     ResolutionError, ShapeMismatchError, SolverError, UnsupportedKernelError,
                     WaldenfelsError)
from .geometry import Ball, Box, Interval, Union, Whole, region_from_dict, region_to_dict
from .kernel import LevyKernel, clip_support, finite_measure, make_alpha_stable, tabulated_density
from .grid import (DomainSpec, Field, Grid, build_ball_domain, build_box_domain,
                   build_interval_domain, field_from_function)
from .operator import (CoefficientFields, DiscreteOperator, apply, assemble, assemble_local,
                       assemble_nonlocal, verify_m_matrix)
from .problem import ProblemSpec
from .elliptic import escape_probability, mean_exit_time, solve_exterior_dirichlet
from .parabolic import TimeGrid, Trajectory, build_fpe_operator, discrete_delta, solve_fpe, \
    step_theta
from .montecarlo import (PathConfig, SDEModel, density_histogram, estimate_escape_probability,
                         estimate_exit_time, sample_stable_increment, simulate_until_exit)
from .checks import (PrincipleReport, check_comparison, check_decay_bound, check_escape_bounds,
                     check_hopf, check_strong, check_weak_elliptic, check_weak_parabolic,
                     propagation_closure)
