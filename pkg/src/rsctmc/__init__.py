"""Risk-sensitive optimal control of finite continuous-time Markov chains."""

from .avg_eigen import (
    LyapunovCertificate,
    ReducibleError,
    StationaryPolicy,
    check_lyapunov,
    evaluate_policy,
    principal_eigen,
    search_certificate,
)
from .hjb_discounted import ThetaPolicy, discounted_value, solve_eps, solve_limit
from .hjb_finite import SolverError, picard_solve, solve_finite_horizon
from .model import CtmdpModel, ModelError, dump_model, load_model, random_model, validate
from .policy_iter import brute_force_average, policy_iteration
from .sim import (
    McEstimate,
    SimulationError,
    mc_average_growth,
    mc_discounted_cost,
    mc_exp_hitting,
    mc_finite_cost,
    mc_poisson_h,
    simulate,
)

__version__ = "0.1.0"
