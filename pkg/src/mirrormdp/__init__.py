"""Mirror-descent solver for average-reward MDPs with a message-passing harness."""

from .amdp_solver import AmdpProgram, round_policy, solve
from .core_solver import ConstrainedProblem, ProxGeometry, SolverConfig, run
from .mdp_core import GenerativeModel, Mdp, Policy, optimal_gain_rvi, policy_value
from .model_estimation import EmpiricalModel, estimate_model
from .parallel import run_parallel

__all__ = [
    "AmdpProgram",
    "ConstrainedProblem",
    "EmpiricalModel",
    "GenerativeModel",
    "Mdp",
    "Policy",
    "ProxGeometry",
    "SolverConfig",
    "estimate_model",
    "optimal_gain_rvi",
    "policy_value",
    "round_policy",
    "run",
    "run_parallel",
    "solve",
]
