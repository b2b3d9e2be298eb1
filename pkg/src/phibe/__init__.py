"""Continuous-time policy evaluation from discretely sampled trajectories."""

from .basis import FourierBasis, PolynomialBasis, Quadrature, eval_basis, gauss_legendre, gram_matrix
from .dynamics import (
    OU1D,
    CubicStabilization1D,
    Linear1D,
    LinearND,
    NonlinearSin1D,
    Trajectory,
    TransitionPairs,
    sample_transition_pairs,
    simulate_trajectory,
)
from .fdcoeff import FdCoefficients, fd_coefficients, order_constant
from .galerkin import LinearSystem, ValueApprox, assemble_be_projection, assemble_phibe, solve
from .modelfree import (
    EmpiricalSystem,
    accumulate_lstd,
    accumulate_pairs_first_order,
    accumulate_phibe,
    solve_empirical,
)

__version__ = "0.1.0"
