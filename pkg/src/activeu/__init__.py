"""Active inference for U-statistics: inverse-probability-weighted and
augmented estimators under a labeling budget, variance-optimal sampling
policies, confidence intervals, and active U-estimation for pairwise losses."""

__version__ = "0.1.0"

from .errors import ActiveUError, ArgumentError, DomainError, EstimationError, ParseError
from .kernels import KernelSpec, builtin_kernel, tuple_sum
from .estimators import ActiveSample, EstimateReport, point_estimate, u_statistic
from .hoeffding import ProjectionEvaluator, estimate_h1
from .policy import PolicySpec, learn_uncertainty, policy_from_scores, uniform_policy
from .inference import confidence_interval, estimate_with_ci, variance_estimate

__all__ = [
    "ActiveUError", "ArgumentError", "DomainError", "EstimationError", "ParseError",
    "KernelSpec", "builtin_kernel", "tuple_sum",
    "ActiveSample", "EstimateReport", "point_estimate", "u_statistic",
    "ProjectionEvaluator", "estimate_h1",
    "PolicySpec", "learn_uncertainty", "policy_from_scores", "uniform_policy",
    "confidence_interval", "estimate_with_ci", "variance_estimate",
]
