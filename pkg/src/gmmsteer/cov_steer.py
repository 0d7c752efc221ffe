"""Covariance steering of a linearized system as a semidefinite program.

With U = K Sigma as decision variable and Phi = I + dt A, Gamma = dt B,
the default scheme ``"em"`` propagates the exact second moment of the
Euler-Maruyama closed loop x+ = Phi x + Gamma K x + noise:

    Sigma_{k+1} = Phi Sigma_k Phi^T + Gamma U_k Phi^T + Phi U_k^T Gamma^T
                  + Gamma Y_k Gamma^T + Q_k,    Y_k = K_k Sigma_k K_k^T,

relaxed to [[Sigma_k, U_k^T], [U_k, Y_k]] >= 0.  Scheme ``"euler"`` drops
the O(dt^2) terms and integrates the Lyapunov ODE instead:

    Sigma_{k+1} = Sigma_k + dt (A_k Sigma_k + Sigma_k A_k^T
                                + B U_k + U_k^T B^T + D D^T + E)

The Euler form is cheaper but does not describe the sampled closed loop,
and gains near -1/(2 dt) shrink its covariance for free.

Before solving, every node k is rescaled by a diagonal congruence
Sigma_k = S_k Sigma~_k S_k (and U_k = su U~_k S_k, Y_k = su^2 Y~_k), which
turns the recursion into

    Sigma~_{k+1} = R_k Sigma~_k R_k + dt (A~_k Sigma~_k R_k + R_k Sigma~_k A~_k^T
                   + B~_k U~_k R_k + R_k U~_k^T B~_k^T) + Q~_k

with R_k = S_{k+1}^{-1} S_k for the Euler scheme; the "em" form follows
the same pattern.  The control scale su_k is per interval as well.  The
orbital problem spans ten orders of magnitude otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import cvxpy as cp
import numpy as np

from .core import LtvTrajectory, check_covariance
from .errors import InfeasibleProblemError, SolverError, UncontrollableError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteLtv:
    """Per-interval data for the Euler covariance update.

    ``Phi[k] = I + dt A_k``, ``Gamma[k] = dt B_k`` and
    ``Q[k] = (D_k D_k^T + E) dt``, so that

        Sigma_{k+1} = Phi Sigma + Sigma Phi^T - Sigma + Gamma U + U^T Gamma^T + Q.
    """

    Phi: np.ndarray
    Gamma: np.ndarray
    Q: np.ndarray
    dt: float


def discretize_ltv(A, B, D, dt, noise_regularization=None):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    K = A.shape[0]
    n = A.shape[1]
    B = np.broadcast_to(np.asarray(B, dtype=np.float64), (K,) + np.shape(B)[-2:])
    D = np.broadcast_to(np.asarray(D, dtype=np.float64), (K,) + np.shape(D)[-2:])
    E = np.zeros((n, n)) if noise_regularization is None else np.asarray(noise_regularization)
    Phi = np.eye(n) + dt * A
    Gamma = dt * B
    Q = (np.einsum("kij,klj->kil", D, D) + E) * dt
    return DiscreteLtv(Phi, np.array(Gamma), Q, float(dt))


@dataclass(frozen=True)
class OcsSdpProblem:
    ltv: LtvTrajectory
    sigma_start: np.ndarray
    sigma_end: np.ndarray
    control_weight: np.ndarray | None = None
    noise_regularization: np.ndarray | None = None

    def __post_init__(self):
        for name in ("sigma_start", "sigma_end"):
            S = np.array(getattr(self, name), dtype=np.float64)
            check_covariance(S, name)
            object.__setattr__(self, name, S)


@dataclass(frozen=True)
class OcsSolution:
    covariances: np.ndarray   # (N, n, n)
    gains: np.ndarray         # (N-1, m, n)
    cost: float
    cross: np.ndarray         # U_k, (N-1, m, n)
    slack: np.ndarray         # Y_k, (N-1, m, m)
    state_scale: np.ndarray   # (N, n) per-node diagonal scaling
    control_scale: np.ndarray  # (N-1,) per-interval control scaling
    status: str

    def scaled(self):
        """(Sigma, U, Y, K) in the solver's normalized units."""
        s, su = self.state_scale, self.control_scale[:, None, None]
        Sig = self.covariances / (s[:, :, None] * s[:, None, :])
        U = self.cross / (su * s[:-1, None, :])
        Y = self.slack / su ** 2
        K = self.gains * s[:-1, None, :] / su
        return Sig, U, Y, K


def _control_weights(R, steps, m):
    if R is None:
        return np.broadcast_to(np.eye(m), (steps, m, m))
    R = np.asarray(R, dtype=np.float64)
    return np.broadcast_to(R, (steps, m, m))


def recover_gain(Sigma, U):
    """K = U Sigma^{-1} by a linear solve, jittering an ill-conditioned Sigma."""
    n = Sigma.shape[0]
    S = 0.5 * (Sigma + Sigma.T)
    if np.linalg.cond(S) > 1e12:
        S = S + 1e-12 * np.trace(S) / n * np.eye(n)
    return np.linalg.solve(S, U.T).T


def dump_conic(problem: cp.Problem, path):
    """Write the canonicalized conic program in a plain-text form.

    Layout: a header line per section, ``c`` as one value per line,
    ``A`` as ``row col value`` triplets, ``b`` one per line, and the cone
    dimensions as ``name: sizes``.  The program is
    ``min c^T x  s.t.  b - A x in K``.
    """
    data, _, _ = problem.get_problem_data(cp.CLARABEL)
    A = data["A"].tocoo()
    dims = data["dims"]
    lines = [f"# conic program: min c'x s.t. b - A x in K; n={A.shape[1]} m={A.shape[0]}"]
    lines.append("[c]")
    lines += [repr(float(v)) for v in data["c"]]
    lines.append("[A]")
    lines += [f"{r} {c} {float(v)!r}" for r, c, v in zip(A.row, A.col, A.data)]
    lines.append("[b]")
    lines += [repr(float(v)) for v in data["b"]]
    lines.append("[cones]")
    lines.append(f"zero: {dims.zero}")
    lines.append(f"nonneg: {dims.nonneg}")
    lines.append(f"soc: {list(dims.soc)}")
    lines.append(f"psd: {list(dims.psd)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _build_and_solve(problem, scales, su, tol, pair, dump_path, scheme):
    ltv = problem.ltv
    N = ltv.grid.node_count
    n, m = ltv.state_dim, ltv.control_dim
    dt = ltv.grid.dt
    steps = N - 1
    S0, ST = problem.sigma_start, problem.sigma_end
    inv = 1.0 / scales

    disc = discretize_ltv(ltv.A[:steps], ltv.B[:steps], ltv.D[:steps], dt, problem.noise_regularization)
    # congruence by diag(scales[k]) at node k; see module docstring
    ratio = inv[1:] * scales[:-1]
    At = ltv.A[:steps] * inv[1:, :, None] * scales[:-1, None, :]
    Bt = ltv.B[:steps] * inv[1:, :, None] * su[:, None, None]
    Qt = disc.Q * inv[1:, :, None] * inv[1:, None, :]
    R = _control_weights(problem.control_weight, steps, m)

    Sig = (
        [S0 / np.outer(scales[0], scales[0])]
        + [cp.Variable((n, n), symmetric=True) for _ in range(N - 2)]
        + [ST / np.outer(scales[-1], scales[-1])]
    )
    U = [cp.Variable((m, n)) for _ in range(steps)]
    Y = [cp.Variable((m, m), symmetric=True) for _ in range(steps)]
    cons = []
    for k in range(steps):
        Rk = np.diag(ratio[k])
        if scheme == "euler":
            prop = Rk @ Sig[k] @ Rk
            drift = At[k] @ Sig[k] @ Rk
            BU = Bt[k] @ U[k] @ Rk
            nxt = prop + dt * (drift + drift.T + BU + BU.T) + Qt[k]
        else:
            Ph = Rk + dt * At[k]
            Gh = dt * Bt[k]
            cross = Gh @ U[k] @ Ph.T
            nxt = Ph @ Sig[k] @ Ph.T + cross + cross.T + Gh @ Y[k] @ Gh.T + Qt[k]
        cons.append(Sig[k + 1] == nxt)
        cons.append(cp.bmat([[Sig[k], U[k].T], [U[k], Y[k]]]) >> 0)
    w = su ** 2 / np.max(su ** 2)
    objective = cp.Minimize(cp.sum([w[k] * cp.trace(R[k] @ Y[k]) for k in range(steps)]))
    prob = cp.Problem(objective, cons)
    if dump_path is not None:
        dump_conic(prob, dump_path)
    try:
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500)
    except cp.error.SolverError as exc:
        raise SolverError(f"conic solver failed: {exc}", pair=pair) from exc
    status = prob.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleProblemError(pair=pair, status=status)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverError(f"conic solver returned status {status!r}", pair=pair, status=status)

    sig_t = np.array([S if isinstance(S, np.ndarray) else S.value for S in Sig])
    sig_t = 0.5 * (sig_t + np.swapaxes(sig_t, 1, 2))
    U_t = np.array([u.value for u in U])
    Y_t = np.array([y.value for y in Y])
    Y_t = 0.5 * (Y_t + np.swapaxes(Y_t, 1, 2))
    K_t = np.array([recover_gain(sig_t[k], U_t[k]) for k in range(steps)])

    outer = scales[:, :, None] * scales[:, None, :]
    cov = sig_t * outer
    cov[0], cov[-1] = S0, ST
    s3 = su[:, None, None]
    gains = K_t * s3 / scales[:-1, None, :]
    cross = U_t * s3 * scales[:-1, None, :]
    slack = Y_t * s3 ** 2
    cost = float(dt * np.einsum("kij,kji->", R, slack))
    sol = OcsSolution(cov, gains, cost, cross, slack, scales, su, status)
    return sol, _quality(sol)


def _quality(sol):
    """Worst LMI gap and most negative relative covariance eigenvalue, scaled units."""
    Sig, U, Y, K = sol.scaled()
    gap = max(
        np.linalg.norm(Y[k] - K[k] @ Sig[k] @ K[k].T) / (1.0 + np.linalg.norm(Y[k]))
        for k in range(len(Y))
    )
    neg = min(np.linalg.eigvalsh(S)[0] / max(np.linalg.eigvalsh(S)[-1], 1e-300) for S in Sig)
    return gap, neg


def _solve_relaxed(problem, scales, su, tol, pair, dump_path, scheme):
    # interior-point runs occasionally stall just short of a tight tolerance
    tries = [tol] + [t for t in (1e-7, 1e-6) if t > tol]
    for attempt, t in enumerate(tries):
        try:
            return _build_and_solve(problem, scales, su, t, pair, dump_path if attempt == 0 else None, scheme)
        except SolverError as exc:
            certain = isinstance(exc, InfeasibleProblemError) and exc.status == cp.INFEASIBLE
            if attempt == len(tries) - 1 or certain:
                raise
            logger.info("SDP for pair %s stalled at tol %.0e; retrying looser", pair, t)


def solve_ocs(problem: OcsSdpProblem, tol=1e-8, pair=None, dump_path=None, scheme="em") -> OcsSolution:
    """Solve the covariance-steering SDP about one reference trajectory.

    Each node is rescaled by a diagonal congruence interpolated
    geometrically between the boundary covariances.  A second solve then
    rescales every node and interval from the first solution so all
    decision blocks are of order one, which is what makes the LMI tight
    to working precision.  The better of the two solves is returned.
    """
    if scheme not in ("em", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    ltv = problem.ltv
    N = ltv.grid.node_count
    if N < 2:
        raise ValueError("need at least two nodes")
    S0, ST = problem.sigma_start, problem.sigma_end
    floor = 1e-150
    d0 = np.sqrt(np.maximum(np.diag(S0), floor))
    dT = np.sqrt(np.maximum(np.diag(ST), floor))
    tau = np.linspace(0.0, 1.0, N)[:, None]
    scales = np.exp((1 - tau) * np.log(d0) + tau * np.log(dT))
    Bn = np.median(np.abs(ltv.B[0][None] / scales[:, :, None]).max(axis=(1, 2)))
    su0 = 1.0 / (ltv.grid.horizon * Bn) if Bn > 0 else 1.0
    su = np.full(N - 1, su0)

    sol, (gap, neg) = _solve_relaxed(problem, scales, su, tol, pair, dump_path, scheme)
    if N > 2 and (gap > 1e-7 or neg < -1e-9):
        diag = np.sqrt(np.clip(np.einsum("kii->ki", sol.covariances), 0.0, None))
        scales2 = np.maximum(diag, 1e-3 * scales)
        ynorm = np.sqrt(np.abs(np.einsum("kii->k", sol.slack)))
        su2 = np.maximum(ynorm, 1e-6 * max(ynorm.max(), floor))
        su2 = np.where(su2 > 0, su2, su0)
        try:
            sol2, (gap2, neg2) = _solve_relaxed(problem, scales2, su2, tol, pair, None, scheme)
        except SolverError as exc:
            logger.info("refined SDP solve for pair %s failed: %s", pair, exc)
        else:
            if max(gap2, -neg2) < max(gap, -neg):
                sol, gap, neg = sol2, gap2, neg2
    if sol.status == cp.OPTIMAL_INACCURATE:
        logger.warning("SDP for pair %s solved inaccurately", pair)
    logger.debug("SDP pair %s: cost %.6e, LMI gap %.2e, min eig %.2e", pair, sol.cost, gap, neg)
    return sol


def linear_mean_feedforward(ltv: LtvTrajectory, mu_start, mu_end, offsets=None, base_control=None):
    """Minimum-energy open-loop control of the Euler-discretized LTV system.

    Solves ``min dt sum |v_k|^2`` subject to
    ``x_{k+1} = (I + dt A_k) x_k + dt B_k v_k + offsets_k``,
    ``x_0 = mu_start`` and ``x_{N-1} = mu_end`` through the weighted
    controllability Gramian.  With ``base_control`` given, the quantity
    minimized is ``dt sum |base_k + v_k|^2`` instead.

    Returns ``(controls, states, cost)``.
    """
    N = ltv.grid.node_count
    n, m = ltv.state_dim, ltv.control_dim
    dt = ltv.grid.dt
    Phi = np.eye(n) + dt * ltv.A[: N - 1]
    Gam = dt * ltv.B[: N - 1]
    off = np.zeros((N - 1, n)) if offsets is None else np.asarray(offsets)
    base = np.zeros((N - 1, m)) if base_control is None else np.asarray(base_control)

    # free response and sensitivity of x_{N-1} to each v_k
    x = np.asarray(mu_start, dtype=np.float64).copy()
    for k in range(N - 1):
        x = Phi[k] @ x + Gam[k] @ base[k] + off[k]
    M = np.empty((N - 1, n, m))
    P = np.eye(n)
    for k in range(N - 2, -1, -1):
        M[k] = P @ Gam[k]
        P = P @ Phi[k]
    G = np.einsum("kij,klj->il", M, M) / dt
    w, V = np.linalg.eigh(G)
    if w[-1] <= 0 or w[0] < 1e-12 * w[-1]:
        raise UncontrollableError(f"controllability Gramian is rank deficient (eigs {w[0]:.3e}..{w[-1]:.3e})")
    # shift so the total control base+v has minimum norm
    r = np.asarray(mu_end) - x + np.einsum("kij,kj->i", M, base)
    lam = np.linalg.solve(G, r)
    total = np.einsum("kji,j->ki", M, lam) / dt
    v = total - base
    states = np.empty((N, n))
    states[0] = mu_start
    for k in range(N - 1):
        states[k + 1] = Phi[k] @ states[k] + Gam[k] @ (base[k] + v[k]) + off[k]
    cost = float(dt * np.sum(total ** 2))
    return v, states, cost
