"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from the ``GMMSTEER_BACKEND``
environment variable (``numba`` or ``numpy``).  When unset, numba is used
if it imports cleanly.  Both paths compute the same quantities; they agree
to round-off but are not guaranteed to be bitwise identical to each other.
Each path on its own is deterministic and independent of thread count,
because every particle is processed by an independent loop body.
"""
import os

import numpy as np

_requested = os.environ.get("GMMSTEER_BACKEND", "").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError("numba disabled by GMMSTEER_BACKEND")
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via subprocess in tests
    HAVE_NUMBA = False

if _requested == "numba" and not HAVE_NUMBA:  # pragma: no cover
    raise ImportError("GMMSTEER_BACKEND=numba but numba is not importable")

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _posterior_weights_numpy(X, means, whiten, log_coef):
    diff = X[:, None, :] - means[None, :, :]  # (P, B, n)
    z = np.einsum("bij,pbj->pbi", whiten, diff)
    logp = log_coef[None, :] - 0.5 * np.einsum("pbi,pbi->pb", z, z)
    top = logp.max(axis=1)
    far = ~np.isfinite(top)
    w = np.exp(logp - np.where(far, 0.0, top)[:, None])
    total = w.sum(axis=1, keepdims=True)
    w /= np.where(far[:, None], 1.0, total)
    if far.any():
        idx = np.nonzero(far)[0]
        d = diff[idx]
        scale = np.abs(d).max(axis=2)
        scale = np.where(scale > 0, scale, 1.0)
        zt = np.einsum("bij,pbj->pbi", whiten, d / scale[:, :, None])
        logd = np.log(scale) + 0.5 * np.log(np.einsum("pbi,pbi->pb", zt, zt))
        w[idx] = 0.0
        w[idx, np.argmin(logd, axis=1)] = 1.0
    return w, far


def _two_body_drift_numpy(X, mu):
    r = X[:, :2]
    rn = np.sqrt(np.einsum("pi,pi->p", r, r))
    acc = -mu * r / rn[:, None] ** 3
    return np.concatenate([X[:, 2:4], acc], axis=1)


def _two_body_jacobian_numpy(X, mu):
    px, py = X[:, 0], X[:, 1]
    r2 = px * px + py * py
    r5 = r2 ** 2.5
    J = np.zeros((X.shape[0], 4, 4))
    J[:, 0, 2] = 1.0
    J[:, 1, 3] = 1.0
    J[:, 2, 0] = mu * (3.0 * px * px - r2) / r5
    J[:, 2, 1] = mu * 3.0 * px * py / r5
    J[:, 3, 0] = J[:, 2, 1]
    J[:, 3, 1] = mu * (3.0 * py * py - r2) / r5
    return J


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _posterior_weights_numba(X, means, whiten, log_coef):
        P, n = X.shape
        B = means.shape[0]
        W = np.zeros((P, B))
        far = np.zeros(P, dtype=np.bool_)
        for p in prange(P):
            logp = np.empty(B)
            diff = np.empty(n)
            top = -np.inf
            for b in range(B):
                for i in range(n):
                    diff[i] = X[p, i] - means[b, i]
                q = 0.0
                for i in range(n):
                    zi = 0.0
                    for j in range(i + 1):
                        zi += whiten[b, i, j] * diff[j]
                    q += zi * zi
                logp[b] = log_coef[b] - 0.5 * q
                if logp[b] > top:
                    top = logp[b]
            if np.isfinite(top):
                s = 0.0
                for b in range(B):
                    W[p, b] = np.exp(logp[b] - top)
                    s += W[p, b]
                for b in range(B):
                    W[p, b] /= s
            else:
                far[p] = True
                best = 0
                best_val = np.inf
                for b in range(B):
                    scale = 0.0
                    for i in range(n):
                        diff[i] = X[p, i] - means[b, i]
                        if abs(diff[i]) > scale:
                            scale = abs(diff[i])
                    if scale == 0.0:
                        scale = 1.0
                    q = 0.0
                    for i in range(n):
                        zi = 0.0
                        for j in range(i + 1):
                            zi += whiten[b, i, j] * diff[j] / scale
                        q += zi * zi
                    val = np.log(scale) + 0.5 * np.log(q)
                    if val < best_val:
                        best_val = val
                        best = b
                W[p, best] = 1.0
        return W, far

    @njit(cache=True, parallel=True)
    def _two_body_drift_numba(X, mu):
        P = X.shape[0]
        out = np.empty((P, 4))
        for p in prange(P):
            px = X[p, 0]
            py = X[p, 1]
            rn = np.sqrt(px * px + py * py)
            c = -mu / (rn * rn * rn)
            out[p, 0] = X[p, 2]
            out[p, 1] = X[p, 3]
            out[p, 2] = c * px
            out[p, 3] = c * py
        return out

    @njit(cache=True, parallel=True)
    def _two_body_jacobian_numba(X, mu):
        P = X.shape[0]
        J = np.zeros((P, 4, 4))
        for p in prange(P):
            px = X[p, 0]
            py = X[p, 1]
            r2 = px * px + py * py
            r5 = r2 ** 2.5
            J[p, 0, 2] = 1.0
            J[p, 1, 3] = 1.0
            J[p, 2, 0] = mu * (3.0 * px * px - r2) / r5
            J[p, 2, 1] = mu * 3.0 * px * py / r5
            J[p, 3, 0] = J[p, 2, 1]
            J[p, 3, 1] = mu * (3.0 * py * py - r2) / r5
        return J


def _prep(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def posterior_weights(X, means, whiten, log_coef, backend=None):
    """Normalized mixture posterior weights for a batch of points.

    Parameters
    ----------
    X : (P, n) array
        Query points.
    means : (B, n) array
        Component means.
    whiten : (B, n, n) array
        Lower-triangular inverse Cholesky factors, so that
        ``|whiten[b] @ (x - means[b])|**2`` is the Mahalanobis distance.
    log_coef : (B,) array
        Log prior weight plus Gaussian normalizing constant per component.

    Returns
    -------
    W : (P, B) array
        Rows sum to one.  Points whose log weights all underflow get a
        one-hot row on the nearest component in Mahalanobis distance.
    far : (P,) bool array
        Marks the points that took the nearest-component fallback.
    """
    backend = backend or BACKEND
    args = (_prep(X), _prep(means), _prep(whiten), _prep(log_coef))
    if backend == "numba":
        return _posterior_weights_numba(*args)
    return _posterior_weights_numpy(*args)


def two_body_drift(X, mu, backend=None):
    backend = backend or BACKEND
    if backend == "numba":
        return _two_body_drift_numba(_prep(X), float(mu))
    return _two_body_drift_numpy(_prep(X), float(mu))


def two_body_jacobian(X, mu, backend=None):
    backend = backend or BACKEND
    if backend == "numba":
        return _two_body_jacobian_numba(_prep(X), float(mu))
    return _two_body_jacobian_numpy(_prep(X), float(mu))


def set_threads(count):
    """Set the numba worker count; a no-op on the numpy backend."""
    if HAVE_NUMBA:
        numba.set_num_threads(count)
