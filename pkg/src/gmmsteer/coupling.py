"""Component-level optimal transport by the transportation simplex method.

The LP is

    min  sum_ij lam_ij C_ij
    s.t. sum_j lam_ij = a_i,  sum_i lam_ij = b_j,  lam >= 0.

Sizes here are a handful of components, so an exact basis-exchange method
is used.  The starting basis comes from the northwest-corner rule, which
always yields a spanning tree of m + n - 1 cells (degenerate cells carry
zero).  Entering and leaving cells are picked by Bland's rule in
row-major (i, j) order, which rules out cycling and makes the returned
vertex reproducible.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .core import TransportPlan
from .errors import InvalidMarginalsError

MARGINAL_TOL = 1e-8


def _check_marginals(a, b):
    for name, w in (("initial", a), ("terminal", b)):
        if w.ndim != 1 or w.size == 0:
            raise InvalidMarginalsError(f"{name} weights must be a non-empty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidMarginalsError(f"{name} weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > MARGINAL_TOL:
            raise InvalidMarginalsError(f"{name} weights sum to {w.sum()!r}, expected 1")
    if abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise InvalidMarginalsError(f"marginal totals differ: {a.sum()!r} vs {b.sum()!r}")


def _northwest_corner(a, b):
    m, n = a.size, b.size
    x = np.zeros((m, n))
    basis = []
    sa, sb = a.copy(), b.copy()
    i = j = 0
    while i < m and j < n:
        q = min(sa[i], sb[j])
        x[i, j] = q
        basis.append((i, j))
        sa[i] -= q
        sb[j] -= q
        # advance exactly one index per cell so the basis stays a tree
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif sa[i] <= sb[j]:
            i += 1
        else:
            j += 1
    return x, basis


def _potentials(C, basis, m, n):
    """Solve u_i + v_j = C_ij on the basis tree with u_0 = 0."""
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, idx = queue.popleft()
        if kind == "r":
            for j in rows[idx]:
                if np.isnan(v[j]):
                    v[j] = C[idx, j] - u[idx]
                    queue.append(("c", j))
        else:
            for i in cols[idx]:
                if np.isnan(u[i]):
                    u[i] = C[i, idx] - v[idx]
                    queue.append(("r", i))
    return u, v


def _tree_path(basis, m, start_row, end_col):
    """Cells on the unique basis-tree path from row ``start_row`` to column ``end_col``."""
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    src, dst = ("r", start_row), ("c", end_col)
    prev = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for nb in adj.get(node, ()):
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    nodes = []
    node = dst
    while node is not None:
        nodes.append(node)
        node = prev[node]
    nodes.reverse()
    cells = []
    for p, q in zip(nodes[:-1], nodes[1:]):
        r = p[1] if p[0] == "r" else q[1]
        c = p[1] if p[0] == "c" else q[1]
        cells.append((r, c))
    return cells


def _simplex(C, a, b, max_iter=10_000):
    m, n = C.shape
    x, basis = _northwest_corner(a, b)
    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    for _ in range(max_iter):
        u, v = _potentials(C, basis, m, n)
        red = C - u[:, None] - v[None, :]
        in_basis = np.zeros((m, n), dtype=bool)
        for i, j in basis:
            in_basis[i, j] = True
        candidates = np.argwhere((red < -tol) & ~in_basis)
        if candidates.size == 0:
            return x, basis, u, v
        ei, ej = (int(t) for t in candidates[0])
        # entering cell closes a cycle: +(ei,ej), then alternate along the tree path
        path = _tree_path(basis, m, ei, ej)
        # path goes row ei -> ... -> column ej; cells alternate -, +, -, ...
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leaving = min(c for c in minus if x[c] <= theta)
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[ei, ej] += theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        basis.sort()
    raise AssertionError("transportation simplex did not terminate")


def solve_transport(costs, initial_weights, terminal_weights) -> TransportPlan:
    """Exact minimum-cost coupling of two discrete marginals.

    Zero-weight components are removed before solving and come back as
    zero rows or columns.  The returned plan carries the dual potentials
    and the primal-dual gap as an optimality certificate.
    """
    C = np.array(costs, dtype=np.float64)
    a = np.array(initial_weights, dtype=np.float64)
    b = np.array(terminal_weights, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost matrix shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(C)):
        raise ValueError("costs must be finite")
    _check_marginals(a, b)
    rows = np.nonzero(a > 0)[0]
    cols = np.nonzero(b > 0)[0]
    Cs = C[np.ix_(rows, cols)]
    xs, _, us, vs = _simplex(Cs, a[rows], b[cols])

    lam = np.zeros_like(C)
    lam[np.ix_(rows, cols)] = xs
    v = np.empty(b.size)
    v[cols] = vs
    u = np.empty(a.size)
    u[rows] = us
    # potentials for dropped components: the tightest dual-feasible values
    drop_c = np.setdiff1d(np.arange(b.size), cols)
    if drop_c.size:
        v[drop_c] = (C[np.ix_(rows, drop_c)] - us[:, None]).min(axis=0)
    drop_r = np.setdiff1d(np.arange(a.size), rows)
    if drop_r.size:
        u[drop_r] = (C[drop_r] - v[None, :]).min(axis=1)
    primal = float(np.sum(lam * C))
    dual = float(a @ u + b @ v)
    return TransportPlan(
        lambdas=lam,
        objective=primal,
        duality_gap=abs(primal - dual),
        row_potentials=u,
        col_potentials=v,
    )


def dual_infeasibility(plan: TransportPlan, costs) -> float:
    """Largest violation of u_i + v_j <= C_ij; zero for a certified optimum."""
    C = np.asarray(costs, dtype=np.float64)
    viol = plan.row_potentials[:, None] + plan.col_potentials[None, :] - C
    return float(max(viol.max(), 0.0))
