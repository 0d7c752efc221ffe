"""End-to-end construction of the mixture policy and the single-linearization baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    BridgeSolution,
    GmmDistribution,
    LtvTrajectory,
    TimeGrid,
    gmm_covariance,
    gmm_mean,
)
from .coupling import solve_transport
from .cov_steer import OcsSdpProblem, linear_mean_feedforward, solve_ocs
from .dynamics import DynamicsModel
from .errors import GmmSteerError, PipelineError
from .mean_ocp import MeanOcpProblem, SqpOptions, euler_reference, euler_rollout, solve_reference
from .policy import MixturePolicy, SlPolicy

logger = logging.getLogger(__name__)

FAILED_PAIR_COST = 1e6


@dataclass(frozen=True)
class SolverOptions:
    """Numerical settings shared by every bridge subproblem.

    ``cost_composition`` is ``"total"`` (mean energy plus SDP objective)
    or ``"sdp_only"``.  With ``euler_reference`` on, the collocation
    reference is refined so it satisfies the forward-Euler recursion the
    simulator uses.
    """

    sqp: SqpOptions = field(default_factory=SqpOptions)
    sdp_tol: float = 1e-8
    sdp_scheme: str = "em"
    noise_regularization: np.ndarray | None = None
    cost_composition: str = "total"
    euler_reference: bool = True
    dump_conic_dir: str | None = None

    def __post_init__(self):
        if self.cost_composition not in ("total", "sdp_only"):
            raise ValueError(f"unknown cost composition {self.cost_composition!r}")


class _ReferenceFailed(GmmSteerError):
    pass


def _reference(model, grid, start, goal, options):
    problem = MeanOcpProblem(model, grid, start, goal)
    ocp = solve_reference(problem, options.sqp)
    if not ocp.converged:
        raise _ReferenceFailed(f"reference OCP did not converge (max defect {ocp.max_defect:.2e})")
    if not options.euler_reference:
        return ocp.states, ocp.controls
    ref = euler_reference(problem, ocp.states, ocp.controls)
    if not ref.converged:
        raise _ReferenceFailed(f"Euler refinement did not converge (terminal error {ref.terminal_error:.2e})")
    return ref.states, ref.controls


def _linearize(model, grid, states, controls):
    t = grid.nodes
    A = np.array([model.jacobian(tk, x) for tk, x in zip(t, states)])
    F = np.array([model.drift(tk, x) for tk, x in zip(t, states)])
    return LtvTrajectory(grid, A, model.B, model.D, states, controls, reference_drift=F)


def _steer(ltv, pair, sigma_start, sigma_end, options):
    dump = None
    if options.dump_conic_dir is not None:
        dump = Path(options.dump_conic_dir) / f"conic_{pair[0]}_{pair[1]}.txt"
    problem = OcsSdpProblem(ltv, sigma_start, sigma_end, noise_regularization=options.noise_regularization)
    sdp = solve_ocs(problem, tol=options.sdp_tol, pair=pair, dump_path=dump, scheme=options.sdp_scheme)
    u = ltv.reference_control
    mean_cost = float(ltv.grid.dt * np.sum(u * u))
    cost = sdp.cost if options.cost_composition == "sdp_only" else mean_cost + sdp.cost
    return BridgeSolution(pair, ltv, sdp.covariances, sdp.gains, cost, mean_cost, sdp.cost)


def solve_bridge(model: DynamicsModel, grid: TimeGrid, start, goal, sigma_start, sigma_end, pair=(0, 0), options=None):
    """Reference, linearization and covariance steering for one component pair."""
    options = options or SolverOptions()
    states, controls = _reference(model, grid, start, goal, options)
    return _steer(_linearize(model, grid, states, controls), pair, sigma_start, sigma_end, options)


def build_ml_policy(model: DynamicsModel, gmm0: GmmDistribution, gmmT: GmmDistribution, grid: TimeGrid,
                    options: SolverOptions | None = None) -> MixturePolicy:
    """Solve every (i, j) bridge, couple them by optimal transport, blend the laws.

    A pair whose reference problem fails gets a large sentinel cost; the
    build aborts only if the transport plan still puts mass on it.  Any
    covariance-steering failure aborts immediately, with the bridges
    solved so far attached to the error.
    """
    options = options or SolverOptions()
    n0, n1 = len(gmm0), len(gmmT)
    costs = np.full((n0, n1), np.nan)
    bridges = {}
    failed = {}
    for i, ci in enumerate(gmm0.components):
        for j, cj in enumerate(gmmT.components):
            pair = (i, j)
            try:
                br = solve_bridge(model, grid, ci.mean, cj.mean, ci.covariance, cj.covariance, pair, options)
            except _ReferenceFailed as exc:
                logger.warning("pair %s: %s", pair, exc)
                failed[pair] = str(exc)
                continue
            except GmmSteerError as exc:
                raise PipelineError(f"pair {pair}: {exc}", pair=pair, partial=dict(bridges)) from exc
            bridges[pair] = br
            costs[pair] = br.cost
            logger.info("pair %s: cost %.6e (mean %.6e, covariance %.6e)", pair, br.cost, br.mean_cost, br.covariance_cost)
    if not bridges:
        raise PipelineError("no bridge could be solved", partial=failed)
    top = np.nanmax(costs)
    costs_lp = np.where(np.isnan(costs), FAILED_PAIR_COST * max(top, 1.0), costs)
    plan = solve_transport(costs_lp, gmm0.weights, gmmT.weights)
    support = plan.support()
    for pair in support:
        if pair in failed:
            raise PipelineError(f"transport plan needs failed pair {pair}", pair=pair, partial=dict(bridges))
    return MixturePolicy(tuple(bridges[p] for p in support), plan, grid, costs=costs)


def build_sl_policy(model: DynamicsModel, gmm0: GmmDistribution, gmmT: GmmDistribution, grid: TimeGrid,
                    options: SolverOptions | None = None, relinearize_iters=0) -> SlPolicy:
    """One bridge between the moment-matched Gaussians of both mixtures.

    With ``relinearize_iters > 0`` the nonlinear mean is re-propagated
    under the current feedforward, the model is relinearized about it and
    the bridge re-solved, until the mean path moves by less than 1e-6.
    """
    options = options or SolverOptions()
    mu0, muT = gmm_mean(gmm0), gmm_mean(gmmT)
    S0, ST = gmm_covariance(gmm0), gmm_covariance(gmmT)
    try:
        states, controls = _reference(model, grid, mu0, muT, options)
        bridge = _steer(_linearize(model, grid, states, controls), (0, 0), S0, ST, options)
    except GmmSteerError as exc:
        raise PipelineError(f"single-linearization bridge: {exc}", pair=(0, 0)) from exc
    done = 0
    for _ in range(int(relinearize_iters)):
        ltv = bridge.ltv
        path = euler_rollout(model, grid, mu0, ltv.reference_control)
        change = float(np.abs(path - ltv.reference_state).max())
        if change < 1e-6:
            break
        lin = _linearize(model, grid, path, ltv.reference_control)
        dt = grid.dt
        off = dt * (lin.reference_drift[:-1] - np.einsum("kij,kj->ki", lin.A[:-1], path[:-1]))
        v, new_states, _ = linear_mean_feedforward(lin, mu0, muT, offsets=off)
        try:
            bridge = _steer(_linearize(model, grid, new_states, v), (0, 0), S0, ST, options)
        except GmmSteerError as exc:
            raise PipelineError(f"relinearization {done + 1}: {exc}", pair=(0, 0)) from exc
        done += 1
    return SlPolicy(bridge, iterations=done)
