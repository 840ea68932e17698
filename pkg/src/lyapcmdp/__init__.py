"""Safe planning in constrained MDPs with Lyapunov certificates."""

from .baselines import (
    LagrangianOptions,
    dual_lp_solve,
    lagrangian_solve,
    stepwise_solve,
    supermartingale_solve,
    unconstrained_solve,
)
from .cmdp import TransientCmdp, evaluate_policy, validate
from .lyapunov import LyapunovCertificate, auxiliary_cost, build_certificate
from .safe_dp import SafeDpOptions, SolveReport, safe_bellman, spi, svi

__all__ = [
    "LagrangianOptions",
    "LyapunovCertificate",
    "SafeDpOptions",
    "SolveReport",
    "TransientCmdp",
    "auxiliary_cost",
    "build_certificate",
    "dual_lp_solve",
    "evaluate_policy",
    "lagrangian_solve",
    "safe_bellman",
    "spi",
    "stepwise_solve",
    "supermartingale_solve",
    "svi",
    "unconstrained_solve",
    "validate",
]
