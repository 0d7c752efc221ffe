"""Euler-Maruyama Monte Carlo of the controlled SDE dx = (f(x) + B u) dt + D dw.

Every particle owns a counter-based Philox stream keyed by (seed, particle
index).  Its initial state and all of its Brownian increments come from
that stream alone, so results do not depend on batch layout or threads.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import GmmDistribution, TimeGrid, symmetric_sqrt
from .dynamics import DynamicsModel
from .errors import NoDataError

logger = logging.getLogger(__name__)

DIVERGENCE_RADIUS = 1e3


@dataclass(frozen=True)
class SimulationResult:
    paths: np.ndarray              # (P, N, n); NaN after divergence
    controls: np.ndarray           # (P, N-1, m)
    per_particle_cost: np.ndarray  # (P,)
    diverged: np.ndarray           # (P,) bool
    seed: int
    substeps: int = 1

    @property
    def terminal_samples(self):
        return self.paths[~self.diverged, -1]

    @property
    def diverged_count(self):
        return int(self.diverged.sum())


def particle_stream(seed, particle):
    """Generator for one particle; the Philox key packs (seed, particle)."""
    key = (int(seed) % (1 << 64)) << 64 | int(particle)
    return np.random.Generator(np.random.Philox(key=key))


def _initial_and_noise(gmm, particles, seed, increments, noise_dim):
    n = gmm.dimension
    roots = [symmetric_sqrt(c.covariance) for c in gmm.components]
    cdf = np.cumsum(gmm.weights)
    X0 = np.empty((particles, n))
    xi = np.empty((particles, increments, noise_dim))
    for p in range(particles):
        rng = particle_stream(seed, p)
        c = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        X0[p] = gmm.components[c].mean + roots[c] @ rng.standard_normal(n)
        xi[p] = rng.standard_normal((increments, noise_dim))
    return X0, xi


def simulate(model: DynamicsModel, policy, gmm0: GmmDistribution, grid: TimeGrid, particles, seed, substeps=1):
    """Propagate ``particles`` samples of ``gmm0`` under ``policy``.

    ``policy`` needs a ``grid`` attribute and a ``control(k, X)`` method
    mapping a (P, n) batch to (P, m) controls.  The control is held over
    each grid interval; ``substeps`` splits the interval for the drift and
    noise only.  Particles that leave the radius-1e3 ball or hit the
    model's singular set are flagged and frozen as NaN.
    """
    particles = int(particles)
    substeps = int(substeps)
    if particles < 1:
        raise ValueError("need at least one particle")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    if getattr(policy, "grid", grid) != grid:
        raise ValueError("policy and simulation grids differ")
    N, dt = grid.node_count, grid.dt
    h = dt / substeps
    n, m = model.state_dim, model.control_dim
    D = model.D
    X, xi = _initial_and_noise(gmm0, particles, seed, (N - 1) * substeps, model.noise_dim)
    paths = np.full((particles, N, n), np.nan)
    controls = np.full((particles, N - 1, m), np.nan)
    cost = np.zeros(particles)
    dead = np.zeros(particles, dtype=bool)
    paths[:, 0] = X
    Bt = model.B.T
    sq = np.sqrt(h)
    t = grid.nodes
    for k in range(N - 1):
        alive = ~dead
        Xa = X[alive]
        U = np.asarray(policy.control(k, Xa), dtype=np.float64).reshape(Xa.shape[0], m)
        controls[alive, k] = U
        cost[alive] += dt * np.einsum("pm,pm->p", U, U)
        for s in range(substeps):
            tk = t[k] + s * h
            Xa = Xa + h * (model.drift(tk, Xa) + U @ Bt) + sq * xi[alive, k * substeps + s] @ D.T
            bad = (
                ~np.all(np.isfinite(Xa), axis=1)
                | (np.linalg.norm(Xa, axis=1) > DIVERGENCE_RADIUS)
                | model.singular_mask(Xa)
            )
            if bad.any():
                idx = np.nonzero(alive)[0][bad]
                dead[idx] = True
                keep = ~bad
                alive = ~dead
                Xa, U = Xa[keep], U[keep]
        X[alive] = Xa
        X[dead] = np.nan
        paths[:, k + 1] = X
    if dead.any():
        logger.warning("%d of %d particles diverged", int(dead.sum()), particles)
    cost[dead] = np.nan
    return SimulationResult(paths, controls, cost, dead, int(seed), substeps)


def estimate_cost(result: SimulationResult) -> float:
    """Mean control energy over the particles that did not diverge."""
    c = result.per_particle_cost[~result.diverged]
    if c.size == 0:
        raise NoDataError("every particle diverged")
    return float(c.mean())


def cost_standard_error(result: SimulationResult) -> float:
    c = result.per_particle_cost[~result.diverged]
    if c.size < 2:
        raise NoDataError("need at least two surviving particles")
    return float(c.std(ddof=1) / np.sqrt(c.size))
