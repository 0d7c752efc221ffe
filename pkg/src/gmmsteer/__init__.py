"""Density steering between Gaussian mixtures by multiple linearizations."""
from .core import (
    BridgeSolution,
    GaussianComponent,
    GmmDistribution,
    LtvTrajectory,
    TimeGrid,
    TransportPlan,
    gmm_covariance,
    gmm_mean,
    gmm_pdf,
    gmm_sample,
    split_gaussian,
)
from .coupling import solve_transport
from .cov_steer import OcsSdpProblem, discretize_ltv, linear_mean_feedforward, solve_ocs
from .dynamics import DoubleIntegrator, LinearModel, TwoBody2D, make_model
from .mean_ocp import MeanOcpProblem, euler_reference, hohmann_initial_guess, solve_reference
from .metrics import empirical_moments, linearization_error_mc, sliced_w2, theorem1_bounds
from .pipeline import SolverOptions, build_ml_policy, build_sl_policy
from .policy import MixturePolicy, SlPolicy, eval_ml_control, eval_sl_control, ml_drift_approximation
from .sim import SimulationResult, estimate_cost, simulate

__version__ = "0.1.0"
