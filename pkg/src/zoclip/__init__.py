"""zoclip: robust scalar-clipped zeroth-order optimization under heavy-tailed noise.

Two-point directional gradient estimation with per-sample scalar clipping,
base and momentum optimizer loops, theory-prescribed parameter planning,
analytic-bound diagnostics, and a benchmark harness with tuning protocol.
"""

from .errors import (
    ConfigError,
    InfeasiblePlanError,
    MalformedReplyError,
    NonFiniteValueError,
    OracleError,
    OracleTimeoutError,
    ZoclipError,
)
from .estimator import (
    GradientEstimate,
    estimate_gradient,
    psi_tau,
    sample_sphere,
    vector_clip,
)
from .oracles import NoiseModelSpec, QuadraticProblem
from .optimizer import BaseConfig, MomentumConfig, RunResult, run
from .planner import PlannedParams, PlannerInputs, plan_base, plan_momentum

__version__ = "1.0.0"

__all__ = [
    "BaseConfig",
    "ConfigError",
    "GradientEstimate",
    "InfeasiblePlanError",
    "MalformedReplyError",
    "MomentumConfig",
    "NoiseModelSpec",
    "NonFiniteValueError",
    "OracleError",
    "OracleTimeoutError",
    "PlannedParams",
    "PlannerInputs",
    "QuadraticProblem",
    "RunResult",
    "ZoclipError",
    "estimate_gradient",
    "plan_base",
    "plan_momentum",
    "psi_tau",
    "run",
    "sample_sphere",
    "vector_clip",
]
