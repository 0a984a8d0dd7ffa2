"""Quasi-Bayesian estimation with a canonical Gaussian Metropolis walk.

The package samples posteriors and quasi-posteriors of possibly non-concave,
discontinuous criterion functions on a localized support ball, plans burn-in
and averaging schedules from conductance-based complexity formulas, and
verifies the underlying normal-approximation and iso-perimetric geometry
numerically.
"""

__version__ = "0.1.0"

from .target import (
    LocalTarget,
    NormalReference,
    SupportBall,
    gaussian_reference_target,
    in_support,
    quadratic_reference,
    support_radius,
)
from .walk import ChainTrace, WalkConfig, proper_move_rate, run_chain, sigma_default, step
from .schedule import (
    SchedulePlan,
    ScheduleInputs,
    beta_factor,
    plan,
    total_work,
    warmness_log_bound,
)
from .estimator import IntegrandSpec, EstimateReport, integrate, mse_harness, qb_point_estimate

__all__ = [
    "LocalTarget",
    "NormalReference",
    "SupportBall",
    "gaussian_reference_target",
    "in_support",
    "quadratic_reference",
    "support_radius",
    "ChainTrace",
    "WalkConfig",
    "proper_move_rate",
    "run_chain",
    "sigma_default",
    "step",
    "SchedulePlan",
    "ScheduleInputs",
    "beta_factor",
    "plan",
    "total_work",
    "warmness_log_bound",
    "IntegrandSpec",
    "EstimateReport",
    "integrate",
    "mse_harness",
    "qb_point_estimate",
]
