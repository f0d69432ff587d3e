from .delay import DelayHierarchy, DelayModelSpec, DelayProblem, delay_model_problem
from .gaussian import GaussianHierarchy, GaussianLevelProblem
from .kl import KLField, kl_log_field
from .poisson import (PoissonHierarchy, PoissonMesh, PoissonProblem, SolverError, SyntheticData,
                      forward_observe, generate_synthetic_data, observation_points, poisson_problem,
                      solve_poisson, solve_poisson_kappa)

__all__ = [
    "DelayHierarchy", "DelayModelSpec", "DelayProblem", "delay_model_problem",
    "GaussianHierarchy", "GaussianLevelProblem", "KLField", "kl_log_field",
    "PoissonHierarchy", "PoissonMesh", "PoissonProblem", "SolverError", "SyntheticData",
    "forward_observe", "generate_synthetic_data", "observation_points", "poisson_problem",
    "solve_poisson", "solve_poisson_kappa",
]
