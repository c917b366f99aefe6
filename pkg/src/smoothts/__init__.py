"""Thompson sampling for continuum-armed bandits with smooth reward functions."""

from .bounds import (
    BoundParams,
    ParametricClassParams,
    ball_width,
    covering_number_log,
    discretization_error_bound,
    exponents,
    general_regret_bound,
    parametric_eluder_bound,
)
from .eluder import (
    eluder_upper_bound,
    greedy_eluder_witness,
    is_eps_dependent,
    min_region_B_star,
    region_size_B,
    width_w_k,
)
from .funclass import (
    FunctionClassSpec,
    GridFunction,
    PriorSpec,
    bump_instance,
    extremal_function,
    sample_prior_function,
    verify_membership,
)
from .harness import ExperimentConfig, estimate_bayesian_regret, fit_exponent, run_episode
from .noise import NoiseModel, make_noise, verify_subexponential

__version__ = "0.1.0"
