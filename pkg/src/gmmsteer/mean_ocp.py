"""Minimum-energy reference trajectories by direct transcription.

The deterministic two-point problem

    min  sum_k |u_k|^2 dt
    s.t. x_{k+1} = x_k + dt/2 (f(x_k) + f(x_{k+1})) + dt B u_k,
         x_0 = start,  x_{N-1} = goal

is solved with a sparse SQP: Newton-KKT steps on the exact Lagrangian
Hessian (falling back to the objective Hessian when curvature is
negative), an l1 merit function, backtracking, and a second-order
correction against the Maratos effect.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import TimeGrid
from .dynamics import DynamicsModel, TwoBody2D

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanOcpProblem:
    model: DynamicsModel
    grid: TimeGrid
    start: np.ndarray
    goal: np.ndarray
    initial_guess: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        start = np.array(self.start, dtype=np.float64)
        goal = np.array(self.goal, dtype=np.float64)
        n = self.model.state_dim
        if start.shape != (n,) or goal.shape != (n,):
            raise ValueError(f"start/goal must have shape ({n},)")
        self.model.check_regular(start)
        self.model.check_regular(goal)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "goal", goal)


@dataclass(frozen=True)
class MeanOcpSolution:
    states: np.ndarray
    controls: np.ndarray
    objective: float
    converged: bool
    iterations: int
    max_defect: float
    boundary_residual: float
    merit_history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class SqpOptions:
    max_iter: int = 200
    defect_tol: float = 1e-8
    step_tol: float = 1e-10
    exact_hessian: bool = True


def straight_line_guess(problem):
    N = problem.grid.node_count
    s = np.linspace(0.0, 1.0, N)[:, None]
    X = (1 - s) * problem.start + s * problem.goal
    U = np.zeros((N - 1, problem.model.control_dim))
    return X, U


def hohmann_initial_guess(problem):
    """Coasting-arc warm start between two heliocentric states.

    Radius is blended monotonically with a half-cosine profile and the
    polar angle advances uniformly in the direction of the start orbit's
    angular momentum.  Velocities are the time derivatives of that path,
    corrected linearly so both endpoint velocities match.  Controls start
    at zero.  Models other than the planar two-body problem get a
    straight-line interpolation instead.
    """
    if not isinstance(problem.model, TwoBody2D):
        return straight_line_guess(problem)
    grid = problem.grid
    N, T = grid.node_count, grid.horizon
    a, b = problem.start, problem.goal
    U = np.zeros((N - 1, 2))
    if np.array_equal(a, b):
        return np.tile(a, (N, 1)), U
    r0, rT = np.hypot(a[0], a[1]), np.hypot(b[0], b[1])
    th0, thT = np.arctan2(a[1], a[0]), np.arctan2(b[1], b[0])
    ccw = a[0] * a[3] - a[1] * a[2] >= 0
    if ccw:
        sweep = np.mod(thT - th0, 2 * np.pi)
    else:
        sweep = -np.mod(th0 - thT, 2 * np.pi)
    s = np.linspace(0.0, 1.0, N)
    r = r0 + (rT - r0) * 0.5 * (1 - np.cos(np.pi * s))
    th = th0 + sweep * s
    dr = (rT - r0) * 0.5 * np.pi * np.sin(np.pi * s) / T
    dth = sweep / T
    c, sn = np.cos(th), np.sin(th)
    pos = np.column_stack([r * c, r * sn])
    vel = np.column_stack([dr * c - r * dth * sn, dr * sn + r * dth * c])
    vel += np.outer(1 - s, a[2:] - vel[0]) + np.outer(s, b[2:] - vel[-1])
    pos[0], pos[-1] = a[:2], b[:2]
    return np.hstack([pos, vel]), U


class _Transcription:
    """Trapezoidal collocation residuals, Jacobian and Lagrangian Hessian."""

    def __init__(self, problem):
        self.p = problem
        self.model = problem.model
        self.N = problem.grid.node_count
        self.n = self.model.state_dim
        self.m = self.model.control_dim
        self.h = problem.grid.dt
        self.t = problem.grid.nodes
        self.nx = self.N * self.n
        self.nz = self.nx + (self.N - 1) * self.m
        self.nc = (self.N + 1) * self.n

    def split(self, z):
        return z[: self.nx].reshape(self.N, self.n), z[self.nx:].reshape(self.N - 1, self.m)

    def pack(self, X, U):
        return np.concatenate([X.ravel(), U.ravel()])

    def objective(self, z):
        _, U = self.split(z)
        return self.h * float(np.sum(U * U))

    def gradient(self, z):
        g = np.zeros(self.nz)
        g[self.nx:] = 2.0 * self.h * z[self.nx:]
        return g

    def drifts(self, X):
        return np.array([self.model.drift(t, x) for t, x in zip(self.t, X)])

    def constraints(self, z):
        X, U = self.split(z)
        F = self.drifts(X)
        d = X[1:] - X[:-1] - 0.5 * self.h * (F[:-1] + F[1:]) - self.h * U @ self.model.B.T
        return np.concatenate([X[0] - self.p.start, d.ravel(), X[-1] - self.p.goal])

    def jacobian(self, z):
        X, _ = self.split(z)
        n, m, N, h = self.n, self.m, self.N, self.h
        A = np.array([self.model.jacobian(t, x) for t, x in zip(self.t, X)])
        I = np.eye(n)
        rows, cols, vals = [], [], []

        def block(r0, c0, M):
            r, c = np.nonzero(M)
            rows.append(r + r0)
            cols.append(c + c0)
            vals.append(M[r, c])

        block(0, 0, I)
        negB = -h * self.model.B
        for k in range(N - 1):
            r0 = n + k * n
            block(r0, k * n, -I - 0.5 * h * A[k])
            block(r0, (k + 1) * n, I - 0.5 * h * A[k + 1])
            block(r0, self.nx + k * m, negB)
        block(n + (N - 1) * n, (N - 1) * n, I)
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.nc, self.nz),
        )

    def hessian(self, z, lam, exact):
        n, N, h = self.n, self.N, self.h
        diag_u = np.full((N - 1) * self.m, 2.0 * h)
        H = sp.diags(np.concatenate([np.zeros(self.nx), diag_u])).tolil()
        if exact and lam is not None:
            X, _ = self.split(z)
            nu = lam[n: n + (N - 1) * n].reshape(N - 1, n)
            w = np.zeros((N, n))
            w[:-1] += nu
            w[1:] += nu
            for k in range(N):
                if not np.any(w[k]):
                    continue
                Hk = -0.5 * h * self.model.lagrangian_hessian(self.t[k], X[k], w[k])
                H[k * n:(k + 1) * n, k * n:(k + 1) * n] = Hk
        return H.tocsc()


def _kkt_solve(H, J, rhs_top, rhs_bot, reg):
    nz = H.shape[0]
    nc = J.shape[0]
    K = sp.bmat([[H + reg * sp.eye(nz), J.T], [J, -1e-14 * sp.eye(nc)]], format="csc")
    sol = spla.splu(K).solve(np.concatenate([rhs_top, rhs_bot]))
    return sol[:nz], sol[nz:]


def solve_reference(problem: MeanOcpProblem, options: SqpOptions | None = None) -> MeanOcpSolution:
    """Solve the transcribed minimum-energy problem for one boundary pair.

    Returns the best iterate; ``converged`` is False when the iteration
    limit is hit before defects and step size fall below tolerance.
    """
    opt = options or SqpOptions()
    tr = _Transcription(problem)
    if problem.initial_guess is not None:
        X0, U0 = (np.asarray(a, dtype=np.float64) for a in problem.initial_guess)
    elif problem.grid.node_count < 3:
        raise ValueError("the transcription needs at least 3 nodes")
    else:
        X0, U0 = hohmann_initial_guess(problem)
    z = tr.pack(X0, U0)
    lam = None
    nu = 0.0
    merit_history = []
    converged = False
    # x-block regularization keeps the Gauss-Newton KKT matrix nonsingular
    reg_x = np.concatenate([np.full(tr.nx, 1e-12), np.zeros(tr.nz - tr.nx)])
    it = 0
    for it in range(1, opt.max_iter + 1):
        c = tr.constraints(z)
        g = tr.gradient(z)
        J = tr.jacobian(z)
        exact = opt.exact_hessian and lam is not None
        for attempt in (exact, False):
            H = tr.hessian(z, lam, attempt)
            p, lam_new = _kkt_solve(H + sp.diags(reg_x), J, -g, -c, 0.0)
            curv = p @ (H @ p)
            if not attempt or curv > -1e-12 * max(1.0, abs(g @ p)):
                break
        nu = max(nu, 1.1 * np.abs(lam_new).max() + 1e-12)
        f0 = tr.objective(z)
        c1 = np.abs(c).sum()
        phi0 = f0 + nu * c1
        D = g @ p - nu * c1
        X, U = tr.split(z)
        xs = max(1.0, np.abs(X).max())
        us = np.abs(U).max()
        px, pu = tr.split(p)
        small = np.abs(px).max() <= opt.step_tol * xs and np.abs(pu).max() <= 1e-8 * us + 1e-15
        if np.abs(c).max() <= opt.defect_tol and small:
            lam = lam_new
            converged = True
            break

        def merit(zz):
            return tr.objective(zz) + nu * np.abs(tr.constraints(zz)).sum()

        alpha = 1.0
        accepted = None
        while alpha > 1e-10:
            trial = z + alpha * p
            phi = merit(trial)
            if phi <= phi0 + 1e-4 * alpha * min(D, 0.0):
                accepted = trial
                break
            if alpha == 1.0:
                c_trial = tr.constraints(trial)
                d, _ = _kkt_solve(H + sp.diags(reg_x), J, np.zeros(tr.nz), -c_trial, 0.0)
                soc = trial + d
                phi_soc = merit(soc)
                if phi_soc <= phi0 + 1e-4 * min(D, 0.0):
                    accepted, phi = soc, phi_soc
                    break
            alpha *= 0.5
        if accepted is None:
            # the full Newton step often still reduces infeasibility near a solution
            if np.abs(c).max() <= 1e3 * opt.defect_tol:
                accepted = z + p
                phi = merit(accepted)
            else:
                logger.warning("SQP line search failed at iteration %d", it)
                break
        merit_history.append((phi0, phi))
        z = accepted
        lam = lam_new
    X, U = tr.split(z)
    X[0] = problem.start
    c = tr.constraints(tr.pack(X, U))
    n = tr.n
    max_defect = float(np.abs(c[n:-n]).max()) if c.size > 2 * n else 0.0
    bres = float(max(np.abs(c[:n]).max(), np.abs(c[-n:]).max()))
    if not converged:
        logger.warning("SQP stopped after %d iterations (max defect %.2e)", it, max_defect)
    return MeanOcpSolution(
        states=X.copy(),
        controls=U.copy(),
        objective=tr.objective(z),
        converged=converged,
        iterations=it,
        max_defect=max_defect,
        boundary_residual=bres,
        merit_history=merit_history,
    )


@dataclass(frozen=True)
class DiscreteReference:
    """A reference that satisfies the forward-Euler recursion exactly."""

    states: np.ndarray
    controls: np.ndarray
    objective: float
    converged: bool
    iterations: int
    terminal_error: float


def euler_rollout(model, grid, start, controls):
    """States of x_{k+1} = x_k + dt (f(t_k, x_k) + B u_k) from ``start``."""
    N, dt = grid.node_count, grid.dt
    X = np.empty((N, model.state_dim))
    X[0] = start
    Bt = model.B.T
    for k in range(N - 1):
        X[k + 1] = X[k] + dt * (model.drift(grid.nodes[k], X[k]) + controls[k] @ Bt)
    return X


def euler_reference(problem: MeanOcpProblem, states, controls, tol=1e-11, max_iter=50) -> DiscreteReference:
    """Re-solve the minimum-energy problem for the forward-Euler dynamics.

    Starting from a (trapezoidal) solution, each iteration linearizes the
    Euler recursion about the current state path and takes the
    minimum-energy control of the linearized system, which is the
    Gauss-Newton step for this problem.  A Monte Carlo simulator stepping
    on the same grid then tracks the returned mean exactly when noise is
    switched off.
    """
    from .core import LtvTrajectory
    from .cov_steer import linear_mean_feedforward

    model, grid = problem.model, problem.grid
    dt = grid.dt
    t = grid.nodes
    X = np.array(states, dtype=np.float64)
    U = np.array(controls, dtype=np.float64)[: grid.node_count - 1]
    X[0] = problem.start
    scale = max(1.0, float(np.abs(problem.goal).max()))
    converged = False
    it = 0
    err = np.inf
    for it in range(1, max_iter + 1):
        A = np.array([model.jacobian(tk, x) for tk, x in zip(t, X)])
        F = np.array([model.drift(tk, x) for tk, x in zip(t, X)])
        off = dt * (F[:-1] - np.einsum("kij,kj->ki", A[:-1], X[:-1]))
        ltv = LtvTrajectory(grid, A, model.B, model.D, X, U)
        U_new, X_lin, _ = linear_mean_feedforward(ltv, problem.start, problem.goal, offsets=off)
        step = float(np.abs(U_new - U).max())
        U = U_new
        X = X_lin
        roll = euler_rollout(model, grid, problem.start, U)
        err = float(np.abs(roll[-1] - problem.goal).max())
        if err <= tol * scale and step <= 1e-8 * max(float(np.abs(U).max()), 1e-300):
            converged = True
            X = roll
            break
    else:
        X = euler_rollout(model, grid, problem.start, U)
        logger.warning("Euler reference refinement stopped after %d iterations (terminal error %.2e)", it, err)
    return DiscreteReference(
        states=X,
        controls=U,
        objective=float(dt * np.sum(U * U)),
        converged=converged,
        iterations=it,
        terminal_error=err,
    )
