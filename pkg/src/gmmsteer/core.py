"""Probability and trajectory types, plus Gaussian-mixture moment algebra."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateComponentError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a, ndim=None):
    a = np.array(a, dtype=np.float64)
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def symmetric_sqrt(S):
    """Symmetric PSD square root with negative eigenvalues clipped to zero."""
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def check_covariance(S, name="covariance"):
    """Raise ``ValueError`` unless ``S`` is symmetric and PSD to round-off."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got shape {S.shape}")
    top = np.abs(S).max() if S.size else 0.0
    if np.abs(S - S.T).max(initial=0.0) > 1e-12 * top:
        raise ValueError(f"{name} is not symmetric")
    if top > 0:
        w = np.linalg.eigvalsh(S)
        if w[0] < -1e-10 * max(w[-1], 0.0) or (w[-1] <= 0 and w[0] < 0):
            raise ValueError(f"{name} is not positive semidefinite (min eig {w[0]:.3e})")


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, 1)
        cov = _frozen(self.covariance, 2)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        check_covariance(cov)
        if not 0.0 < float(self.weight) <= 1.0:
            raise ValueError(f"weight must lie in (0, 1], got {self.weight}")
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class GmmDistribution:
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError(f"components disagree on dimension: {sorted(dims)}")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"component weights sum to {total!r}, expected 1")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, means, covariances):
        return cls(tuple(GaussianComponent(w, m, S) for w, m, S in zip(weights, means, covariances)))

    @classmethod
    def single(cls, mean, covariance):
        return cls((GaussianComponent(1.0, mean, covariance),))

    @property
    def dimension(self):
        return self.components[0].dim

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    @property
    def means(self):
        return np.array([c.mean for c in self.components])

    @property
    def covariances(self):
        return np.array([c.covariance for c in self.components])

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    node_count: int

    def __post_init__(self):
        if int(self.node_count) < 2:
            raise ValueError("a time grid needs at least two nodes")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "node_count", int(self.node_count))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self):
        return self.horizon / (self.node_count - 1)

    @property
    def nodes(self):
        t = np.linspace(0.0, self.horizon, self.node_count)
        t.setflags(write=False)
        return t

    def node_at(self, t):
        """Zero-order-hold interval index for continuous time ``t``."""
        k = int(np.floor(t / self.dt + 1e-12))
        return min(max(k, 0), self.node_count - 2)


@dataclass(frozen=True)
class LtvTrajectory:
    """Linearization of a model about one reference trajectory.

    ``A`` and ``reference_state`` live on the N nodes; ``reference_control``
    lives on the N-1 zero-order-hold intervals.  ``reference_drift`` holds
    f(mu_k) when the trajectory came from a nonlinear model.
    """

    grid: TimeGrid
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    reference_state: np.ndarray
    reference_control: np.ndarray
    reference_drift: np.ndarray | None = None

    def __post_init__(self):
        N = self.grid.node_count
        A = _frozen(self.A, 3)
        n = A.shape[1]
        B = _frozen(self.B)
        D = _frozen(self.D)
        if B.ndim == 2:
            B = _frozen(np.broadcast_to(B, (N,) + B.shape))
        if D.ndim == 2:
            D = _frozen(np.broadcast_to(D, (N,) + D.shape))
        mu = _frozen(self.reference_state, 2)
        ubar = _frozen(self.reference_control, 2)
        if A.shape[0] != N or B.shape[0] != N or D.shape[0] != N or mu.shape != (N, n):
            raise ValueError("LTV arrays must have one entry per grid node")
        if ubar.shape[0] not in (N - 1, N):
            raise ValueError("reference control needs N-1 (or N) entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "reference_state", mu)
        object.__setattr__(self, "reference_control", _frozen(ubar[: N - 1]))
        if self.reference_drift is not None:
            object.__setattr__(self, "reference_drift", _frozen(self.reference_drift, 2))

    @property
    def state_dim(self):
        return self.A.shape[1]

    @property
    def control_dim(self):
        return self.B.shape[2]


@dataclass(frozen=True)
class BridgeSolution:
    """One (i, j) Gaussian bridge: reference, covariance path, gains, cost.

    ``cost`` is the total used in the transport problem; ``mean_cost`` and
    ``covariance_cost`` are its two parts.
    """

    pair: tuple[int, int]
    ltv: LtvTrajectory
    covariances: np.ndarray
    gains: np.ndarray
    cost: float
    mean_cost: float = 0.0
    covariance_cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "covariances", _frozen(self.covariances, 3))
        object.__setattr__(self, "gains", _frozen(self.gains, 3))
        object.__setattr__(self, "pair", tuple(int(v) for v in self.pair))

    def control(self, k, x):
        """Affine law K_k (x - mu_k) + ubar_k."""
        x = np.asarray(x, dtype=np.float64)
        dev = x - self.ltv.reference_state[k]
        return dev @ self.gains[k].T + self.ltv.reference_control[k]


@dataclass(frozen=True)
class TransportPlan:
    lambdas: np.ndarray
    objective: float = float("nan")
    duality_gap: float = float("nan")
    row_potentials: np.ndarray | None = field(default=None, repr=False)
    col_potentials: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", _frozen(self.lambdas, 2))

    def support(self, tol=0.0):
        """Index pairs (i, j) carrying mass above ``tol``, row-major order."""
        return [tuple(int(v) for v in ij) for ij in np.argwhere(self.lambdas > tol)]


# ---------------------------------------------------------------------------
# moment algebra
# ---------------------------------------------------------------------------

def gmm_mean(gmm: GmmDistribution) -> np.ndarray:
    return gmm.weights @ gmm.means


def gmm_covariance(gmm: GmmDistribution) -> np.ndarray:
    """Total covariance: within-component plus between-component spread."""
    w = gmm.weights
    mu = gmm_mean(gmm)
    dev = gmm.means - mu
    within = np.einsum("i,ijk->jk", w, gmm.covariances)
    between = (dev * w[:, None]).T @ dev
    S = within + between
    return 0.5 * (S + S.T)


def regularized_cholesky(S, index=0):
    """Cholesky factor of ``S``, regularizing singular matrices once.

    The jitter is 1e-12 * tr(S)/n on the diagonal.  Raises
    :class:`DegenerateComponentError` carrying ``index`` if that is not
    enough.
    """
    S = np.asarray(S, dtype=np.float64)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    n = S.shape[0]
    jitter = 1e-12 * np.trace(S) / n
    if not jitter > 0:
        raise DegenerateComponentError(index)
    logger.info("regularizing covariance of component %d with jitter %.3e", index, jitter)
    try:
        return np.linalg.cholesky(S + jitter * np.eye(n))
    except np.linalg.LinAlgError:
        raise DegenerateComponentError(index) from None


def gaussian_logpdf(X, mean, L):
    """Log density of N(mean, L L^T) at the rows of ``X``."""
    X = np.atleast_2d(X)
    n = mean.size
    z = np.linalg.solve(L, (X - mean).T)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (np.einsum("ij,ij->j", z, z) + logdet + n * LOG_2PI)


def gmm_pdf(gmm: GmmDistribution, x):
    """Mixture density at ``x`` and the per-component log densities.

    ``x`` may be a single point (n,) or a batch (P, n).  Returns
    ``(density, logpdfs)`` with ``logpdfs[..., i] = log N(x; mu_i, S_i)``
    (without the mixture weight).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != gmm.dimension:
        raise ValueError(f"point dimension {X.shape[1]} != mixture dimension {gmm.dimension}")
    logs = np.empty((X.shape[0], len(gmm)))
    for i, c in enumerate(gmm.components):
        logs[:, i] = gaussian_logpdf(X, c.mean, regularized_cholesky(c.covariance, i))
    logw = logs + np.log(gmm.weights)
    top = logw.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    dens = np.exp(safe) * np.exp(logw - safe[:, None]).sum(axis=1)
    if single:
        return float(dens[0]), logs[0]
    return dens, logs


def gmm_sample(gmm: GmmDistribution, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` i.i.d. samples; identical output for identical seeds."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.Generator(np.random.Philox(seed))
    labels = rng.choice(len(gmm), size=count, p=gmm.weights)
    z = rng.standard_normal((count, gmm.dimension))
    out = np.empty((count, gmm.dimension))
    for i, c in enumerate(gmm.components):
        sel = labels == i
        out[sel] = c.mean + z[sel] @ symmetric_sqrt(c.covariance)
    return out


def split_gaussian(mean, covariance, count, direction, spread=0.5):
    """Moment-preserving split of one Gaussian into equal-weight components.

    Component means are placed symmetrically along ``direction`` and each
    component covariance is shrunk along that direction so the mixture has
    exactly the original mean and covariance.  ``spread`` is the fraction of
    the directional variance carried by the spread of the means.
    """
    mean = np.asarray(mean, dtype=np.float64)
    S = np.asarray(covariance, dtype=np.float64)
    e = np.asarray(direction, dtype=np.float64)
    e = e / np.linalg.norm(e)
    if count == 1:
        return GmmDistribution.single(mean, S)
    offsets = np.linspace(-1.0, 1.0, count)
    offsets -= offsets.mean()
    # variance along e, in the metric of S
    Se = S @ e
    var_e = e @ Se
    # displacement vector chosen so the rank-one reduction keeps S PSD
    v = Se / np.sqrt(var_e)
    scale = np.sqrt(spread / np.mean(offsets ** 2))
    means = mean + np.outer(offsets * scale, v)
    cov = S - spread * np.outer(v, v)
    cov = 0.5 * (cov + cov.T)
    w = np.full(count, 1.0 / count)
    w[-1] = 1.0 - w[:-1].sum()
    return GmmDistribution.from_arrays(w, means, [cov] * count)

