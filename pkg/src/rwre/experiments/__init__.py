"""Composite experiments built on the solvers, kernels and invariant measures."""

from .decay import (DecayCurve, caccioppoli_check, corrector_cauchy, dirichlet_form,
                    semigroup_decay, stationary_corrector)
from .goodpoints import count_bad_points, local_discrepancy, torus_means
from .homogenization import (CASES, HomogCase, corrector_growth, effective_solution, get_case,
                             homogenization_error, rate_fit, solve_case)
from .vertical import DuhamelTerms, duhamel_check, efron_stein_V, trapezoid_adaptive, vertical_derivative

__all__ = [
    "CASES", "DecayCurve", "DuhamelTerms", "HomogCase", "caccioppoli_check", "corrector_cauchy",
    "corrector_growth", "count_bad_points", "dirichlet_form", "duhamel_check", "effective_solution",
    "efron_stein_V", "get_case", "homogenization_error", "local_discrepancy", "rate_fit",
    "semigroup_decay", "solve_case", "stationary_corrector", "torus_means", "trapezoid_adaptive",
    "vertical_derivative",
]
