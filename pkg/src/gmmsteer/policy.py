"""Mixture feedback policy over Gaussian bridges, and the single-bridge baseline.

The mixture control at node k is

    u(x) = sum_b w_b(x) (K_{k,b} (x - mu_{k,b}) + ubar_{k,b}),
    w_b(x) proportional to lam_b N(x; mu_{k,b}, Sigma_{k,b}),

with the weights normalized in the log domain.  Inverse Cholesky factors
and log normalizing constants of every bridge covariance are computed
once per node when the policy is assembled.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .core import LOG_2PI, BridgeSolution, TimeGrid, TransportPlan, regularized_cholesky

logger = logging.getLogger(__name__)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


@dataclass(frozen=True)
class MixturePolicy:
    bridges: tuple[BridgeSolution, ...]
    plan: TransportPlan
    grid: TimeGrid
    costs: np.ndarray | None = field(default=None, repr=False)  # (N0, N1), NaN for failed pairs
    prior: np.ndarray = field(init=False, repr=False)
    means: np.ndarray = field(init=False, repr=False)     # (N, B, n)
    gains: np.ndarray = field(init=False, repr=False)     # (N-1, B, m, n)
    feedforward: np.ndarray = field(init=False, repr=False)  # (N-1, B, m)
    drifts: np.ndarray | None = field(init=False, repr=False)  # (N, B, n)
    jacobians: np.ndarray = field(init=False, repr=False)  # (N, B, n, n)
    whiten: np.ndarray = field(init=False, repr=False)    # (N, B, n, n)
    log_coef: np.ndarray = field(init=False, repr=False)  # (N, B)

    def __post_init__(self):
        bridges = tuple(self.bridges)
        if not bridges:
            raise ValueError("a mixture policy needs at least one bridge")
        N = self.grid.node_count
        for br in bridges:
            if br.ltv.grid != self.grid:
                raise ValueError(f"bridge {br.pair} lives on a different time grid")
        lam = np.array([self.plan.lambdas[br.pair] for br in bridges])
        if np.any(lam <= 0):
            raise ValueError("bridges with zero transport mass must be left out")
        if abs(lam.sum() - 1.0) > 1e-9:
            raise ValueError(f"bridge masses sum to {lam.sum()!r}, expected 1")
        n = bridges[0].ltv.state_dim
        means = np.stack([br.ltv.reference_state for br in bridges], axis=1)
        gains = np.stack([br.gains for br in bridges], axis=1)
        ff = np.stack([br.ltv.reference_control for br in bridges], axis=1)
        jac = np.stack([br.ltv.A for br in bridges], axis=1)
        if all(br.ltv.reference_drift is not None for br in bridges):
            drifts = np.stack([br.ltv.reference_drift for br in bridges], axis=1)
        else:
            drifts = None
        whiten = np.empty((N, len(bridges), n, n))
        log_coef = np.empty((N, len(bridges)))
        for b, br in enumerate(bridges):
            for k in range(N):
                L = regularized_cholesky(br.covariances[k], b)
                whiten[k, b] = np.linalg.inv(L)
                log_coef[k, b] = np.log(lam[b]) - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
        for name, value in (
            ("bridges", bridges), ("prior", lam), ("means", means), ("gains", gains),
            ("feedforward", ff), ("drifts", drifts), ("jacobians", jac),
            ("whiten", whiten), ("log_coef", log_coef),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    def weights(self, k, x):
        """Posterior bridge weights at node ``k``; rows sum to one."""
        X, single = _as_batch(x)
        W, far = _accel.posterior_weights(X, self.means[k], self.whiten[k], self.log_coef[k])
        if far.any():
            logger.warning("%d state(s) far from every bridge at node %d; using nearest bridge", int(far.sum()), k)
        return W[0] if single else W

    def control(self, k, x):
        return eval_ml_control(self, k, x)


@dataclass(frozen=True)
class SlPolicy:
    """Affine law about one reference: u = K_k (x - mu_k) + ubar_k."""

    bridge: BridgeSolution
    iterations: int = 0

    @property
    def grid(self):
        return self.bridge.ltv.grid

    @property
    def reference_state(self):
        return self.bridge.ltv.reference_state

    @property
    def reference_control(self):
        return self.bridge.ltv.reference_control

    @property
    def gains(self):
        return self.bridge.gains

    @property
    def covariances(self):
        return self.bridge.covariances

    def control(self, k, x):
        return eval_sl_control(self, k, x)


def _check_node(grid, k):
    if not 0 <= k <= grid.node_count - 2:
        raise IndexError(f"control node {k} outside 0..{grid.node_count - 2}")


def eval_ml_control(policy: MixturePolicy, k, x):
    """Posterior-weighted blend of the bridge affine laws at node ``k``."""
    _check_node(policy.grid, k)
    X, single = _as_batch(x)
    W = policy.weights(k, X)
    dev = X[:, None, :] - policy.means[k][None]
    local = np.einsum("bmn,pbn->pbm", policy.gains[k], dev) + policy.feedforward[k][None]
    u = np.einsum("pb,pbm->pm", W, local)
    return u[0] if single else u


def eval_sl_control(policy: SlPolicy, k, x):
    _check_node(policy.grid, k)
    X, single = _as_batch(x)
    u = (X - policy.reference_state[k]) @ policy.gains[k].T + policy.reference_control[k]
    return u[0] if single else u


def ml_drift_approximation(policy: MixturePolicy, k, x):
    """Posterior-weighted blend of the bridge linearizations f(mu) + A (x - mu).

    Needs ``reference_drift`` on every bridge.  Valid for every node
    including the terminal one.
    """
    if policy.drifts is None:
        raise ValueError("bridges carry no reference drift")
    if not 0 <= k <= policy.grid.node_count - 1:
        raise IndexError(f"node {k} outside 0..{policy.grid.node_count - 1}")
    X, single = _as_batch(x)
    W = policy.weights(k, X)
    dev = X[:, None, :] - policy.means[k][None]
    local = np.einsum("bij,pbj->pbi", policy.jacobians[k], dev) + policy.drifts[k][None]
    f = np.einsum("pb,pbi->pi", W, local)
    return f[0] if single else f
