"""Persistent normally hyperbolic invariant manifolds by Lyapunov-Perron iteration.

The base X is a flat periodic box and the fibre Y = R^n; the vertical
field is split as ``A(x) y + f(x, y)``.
"""
from .errors import (AdmissibilityError, ConfigError, ConvergenceError, DimensionError,
                     EvaluationError, IntegrationError, ManifoldSolveError, NHIMError,
                     ParseError, RateFitError)
from .flow import Cocycle, Curve, flow_horizontal, flow_linear, variational_flow
from .perron import (GraphManifold, PerronConfig, PerronState, apply_TX, apply_TY,
                     evaluate_h, iterate_T, solve_manifold, suggest_horizon)
from .rates import GapReport, RateEstimate, check_gap, estimate_rates
from .verify import (ResidualReport, SweepResult, invariance_residual, manifold_distance,
                     perturbation_sweep)
from .vf_model import (PerturbationSpec, SystemSpec, apply_perturbation, eval_horizontal,
                       eval_linear, eval_nonlinear, parse_perturbation, parse_system)

__version__ = "0.1.0"
