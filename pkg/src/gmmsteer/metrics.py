"""Distribution-matching metrics and Monte Carlo checks of the linearization bounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GmmDistribution, gmm_covariance, gmm_pdf, gmm_sample
from .errors import NoDataError


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def sliced_w2(samples_a, samples_b, projections=256, seed=0):
    """Sliced 2-Wasserstein distance between two point clouds.

    Each random unit direction reduces the problem to 1-D, where W2 is
    exact by pairing order statistics.  The result is the square root of
    the mean squared 1-D distance.  In one dimension the only direction is
    used and the value is the exact W2.  When the sets differ in size the
    larger one is subsampled without replacement to the smaller size, with
    the subsample drawn from ``seed``.
    """
    A = np.asarray(samples_a, dtype=np.float64)
    B = np.asarray(samples_b, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if len(A) == 0 or len(B) == 0:
        raise NoDataError("sliced_w2 needs non-empty sample sets")
    rng = _rng(seed)
    if len(A) != len(B):
        size = min(len(A), len(B))
        if len(A) > size:
            A = A[np.sort(rng.choice(len(A), size, replace=False))]
        else:
            B = B[np.sort(rng.choice(len(B), size, replace=False))]
    n = A.shape[1]
    if n == 1:
        d = np.sort(A[:, 0]) - np.sort(B[:, 0])
        return float(np.sqrt(np.mean(d * d)))
    dirs = rng.standard_normal((int(projections), n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(A @ dirs.T, axis=0)
    pb = np.sort(B @ dirs.T, axis=0)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def empirical_moments(samples):
    """Unbiased sample mean and covariance."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2:
        raise NoDataError("need at least two samples for a covariance")
    mean = X.mean(axis=0)
    dev = X - mean
    return mean, dev.T @ dev / (len(X) - 1)


def theorem1_bounds(gmm: GmmDistribution):
    """(tr of the total covariance, weighted sum of component traces).

    Both are the linearization error bounds with the problem constant set
    to one; the first is never smaller than the second.
    """
    total = float(np.trace(gmm_covariance(gmm)))
    within = float(gmm.weights @ np.trace(gmm.covariances, axis1=1, axis2=2))
    return total, within


@dataclass(frozen=True)
class LinearizationError:
    sl: float
    ml: float
    sl_se: float
    ml_se: float
    diff_se: float   # standard error of the per-sample difference sl - ml
    norm: str


def _norm(E, norm):
    if norm in ("l1", "1", 1):
        return np.abs(E).sum(axis=1)
    if norm in ("l2", "2", 2):
        return np.sqrt(np.einsum("pi,pi->p", E, E))
    raise ValueError(f"unknown norm {norm!r}")


def _linearize(model, t, X, point):
    point = np.asarray(point, dtype=np.float64)
    return model.drift(t, point) + (X - point) @ model.jacobian(t, point).T


def _se(v):
    return float(v.std(ddof=1) / np.sqrt(v.size))


def linearization_error_mc(model, gmm: GmmDistribution, samples=10**6, seed=0, norm="l1", t=0.0, points=None):
    """Expected single- and multiple-linearization drift errors under ``gmm``.

    The single linearization is taken at the mixture mean; the multiple
    linearization blends one linearization per component (at ``points``,
    the component means by default) with posterior component weights.
    Both errors are measured on the same samples, so ``diff_se`` is the
    standard error of the paired difference.
    """
    X = gmm_sample(gmm, int(samples), seed)
    pts = gmm.means if points is None else np.asarray(points, dtype=np.float64)
    for p in list(pts) + [gmm.weights @ pts]:
        model.check_regular(p)
    f = model.drift(t, X)
    f_sl = _linearize(model, t, X, gmm.weights @ gmm.means)
    _, logs = gmm_pdf(gmm, X)
    logw = logs + np.log(gmm.weights)
    logw -= logw.max(axis=1, keepdims=True)
    W = np.exp(logw)
    W /= W.sum(axis=1, keepdims=True)
    f_ml = np.zeros_like(f)
    for i, p in enumerate(pts):
        f_ml += W[:, i:i + 1] * _linearize(model, t, X, p)
    e_sl = _norm(f - f_sl, norm)
    e_ml = _norm(f - f_ml, norm)
    return LinearizationError(
        sl=float(e_sl.mean()),
        ml=float(e_ml.mean()),
        sl_se=_se(e_sl),
        ml_se=_se(e_ml),
        diff_se=_se(e_sl - e_ml),
        norm=str(norm),
    )


def point_linearization_errors(model, mean, covariance, points, samples=10**5, seed=0, norm="l1", t=0.0):
    """Expected error of linearizing at each of ``points`` under N(mean, covariance).

    Returns ``(errors, paired_se)`` where ``paired_se[q]`` is the standard
    error of the difference between point ``q`` and the first point, all
    on common samples.
    """
    gmm = GmmDistribution.single(mean, covariance)
    X = gmm_sample(gmm, int(samples), seed)
    f = model.drift(t, X)
    per = np.array([_norm(f - _linearize(model, t, X, p), norm) for p in points])
    errors = per.mean(axis=1)
    paired = np.array([_se(per[q] - per[0]) if q else 0.0 for q in range(len(per))])
    return errors, paired
