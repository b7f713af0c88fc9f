"""Mayer optimal control: value functions, characteristics and sensitivity checks."""

from .benchmarks import ConeVariant, cone_variant, instance
from .dynamics import Ball, FixedBody, Interval1D, Polytope, SetValuedMap, audit_hypotheses, hamiltonian
from .exceptions import (CFLError, ConfigError, DichotomyError, DimensionError, DomainError, DomainExitError,
                         InvalidDynamicsError, MayerSensError, NoDifferentiabilityPointsError, NumericalError,
                         SubgradientError)
from .flow import (ArcPair, forward_flow, integrate_characteristics, integrate_forward,
                   maximum_principle_residual, solve_dual_terminal)
from .hjb import GridSpec, MayerProblem, ValueField, dpp_check, solve_hjb, synthesize_trajectory, viscosity_residual
from .nonsmooth import (SampledFunction, dini_upper_derivative, frechet_superdiff_membership,
                        proximal_supergradient_test, reachable_gradients, semiconcavity_constant)
from .problem_file import load_problem, parse_problem
from .sensitivity import (audit_h4, dual_fan, gradient_trajectory_atlas, sufficient_optimality_check,
                          verify_full_sensitivity, verify_partial_sensitivity)

__version__ = "0.1.0"
