"""Drift models f(x), their Jacobians, and a finite-difference oracle.

State vectors may carry leading batch axes: ``drift`` maps ``(..., n)`` to
``(..., n)`` and ``jacobian`` maps ``(..., n)`` to ``(..., n, n)``.  The
input and noise matrices ``B`` and ``D`` are constant.

Units follow the scaled astronomical system (AU, day) for the orbital
model.  Conversion helpers for km/s and m/s^(3/2) are provided here so the
configuration layer applies them exactly once.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from .errors import SingularityError

AU_KM = 1.495978707e8
DAY_S = 86400.0
KMS_TO_AU_PER_DAY = DAY_S / AU_KM
# m/s^(3/2) -> AU/day^(3/2)
NOISE_SI_TO_SCALED = DAY_S ** 1.5 / (AU_KM * 1e3)

SUN_MU = 2.9591e-4  # AU^3/day^2


def kms_to_au_per_day(v):
    return np.asarray(v, dtype=np.float64) * KMS_TO_AU_PER_DAY


def noise_si_to_scaled(g):
    return float(g) * NOISE_SI_TO_SCALED


class DynamicsModel:
    """Control-affine drift model dx = f(t, x) dt + B u dt + D dw.

    Subclasses implement :meth:`drift` and :meth:`jacobian`, and may
    override :meth:`singular_mask` to declare states where the drift is
    undefined.
    """

    name = "abstract"

    def __init__(self, B, D, parameters=None):
        self._B = np.array(B, dtype=np.float64)
        self._D = np.array(D, dtype=np.float64)
        self._B.setflags(write=False)
        self._D.setflags(write=False)
        self.parameters = dict(parameters or {})

    @property
    def B(self):
        return self._B

    @property
    def D(self):
        return self._D

    @property
    def state_dim(self):
        return self._B.shape[0]

    @property
    def control_dim(self):
        return self._B.shape[1]

    @property
    def noise_dim(self):
        return self._D.shape[1]

    def singular_mask(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.zeros(x.shape[:-1], dtype=bool)

    def check_regular(self, x):
        if np.any(self.singular_mask(x)):
            raise SingularityError(self.name)

    def drift(self, t, x):
        raise NotImplementedError

    def jacobian(self, t, x):
        raise NotImplementedError

    def lagrangian_hessian(self, t, x, lam):
        """Hessian of ``lam . f(t, x)`` with respect to ``x``.

        The default differentiates ``jacobian(x).T @ lam`` by central
        differences, which is plenty for the SQP curvature term.
        """
        x = np.asarray(x, dtype=np.float64)
        n = x.size
        h = 1e-6 * max(1.0, np.linalg.norm(x))
        H = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            H[:, i] = (self.jacobian(t, x + e).T @ lam - self.jacobian(t, x - e).T @ lam) / (2 * h)
        return 0.5 * (H + H.T)

    def __repr__(self):
        return f"{type(self).__name__}({self.parameters})"


class TwoBody2D(DynamicsModel):
    """Planar heliocentric point mass; state (px, py, vx, vy)."""

    name = "two_body_2d"
    min_radius = 1e-8

    def __init__(self, mu=SUN_MU, noise=0.0):
        B = np.vstack([np.zeros((2, 2)), np.eye(2)])
        D = np.vstack([np.zeros((2, 2)), noise * np.eye(2)])
        super().__init__(B, D, {"mu": float(mu), "noise": float(noise)})
        self.mu = float(mu)

    def singular_mask(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.hypot(x[..., 0], x[..., 1]) < self.min_radius

    def drift(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        self.check_regular(x)
        flat = x.reshape(-1, 4)
        return _accel.two_body_drift(flat, self.mu).reshape(x.shape)

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        self.check_regular(x)
        flat = x.reshape(-1, 4)
        return _accel.two_body_jacobian(flat, self.mu).reshape(x.shape + (4,))

    def lagrangian_hessian(self, t, x, lam):
        # only the velocity rows depend on position
        H = np.zeros((4, 4))
        H[:2, :2] = _gravity_hessian_contract(x[0], x[1], lam[2], lam[3], self.mu)
        return H


def _gravity_hessian_contract(px, py, lx, ly, mu):
    """sum_k l_k d^2 a_k / dr_i dr_j for a = -mu r / |r|^3 (2-D)."""
    r = np.array([px, py])
    lv = np.array([lx, ly])
    r2 = r @ r
    rn = np.sqrt(r2)
    s = lv @ r
    # a_k = -mu r_k / rn^3 ; d a_k/dr_i = -mu (delta_ki / rn^3 - 3 r_k r_i / rn^5)
    # d2 a_k / dr_i dr_j = 3 mu (delta_ki r_j + delta_kj r_i + delta_ij r_k) / rn^5 - 15 mu r_k r_i r_j / rn^7
    I = np.eye(2)
    H = 3.0 * mu * (np.outer(lv, r) + np.outer(r, lv) + s * I) / rn ** 5 - 15.0 * mu * s * np.outer(r, r) / rn ** 7
    return 0.5 * (H + H.T)


class DoubleIntegrator(DynamicsModel):
    """Unit-mass double integrator in ``dim`` axes; state (positions, velocities)."""

    name = "double_integrator"

    def __init__(self, dim=1, noise=0.0):
        dim = int(dim)
        B = np.vstack([np.zeros((dim, dim)), np.eye(dim)])
        D = np.vstack([np.zeros((dim, dim)), noise * np.eye(dim)])
        super().__init__(B, D, {"dim": dim, "noise": float(noise)})
        self.dim = dim
        A = np.zeros((2 * dim, 2 * dim))
        A[:dim, dim:] = np.eye(dim)
        self._A = A

    def drift(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        return np.concatenate([x[..., self.dim:], np.zeros_like(x[..., self.dim:])], axis=-1)

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(self._A, x.shape[:-1] + self._A.shape).copy()

    def lagrangian_hessian(self, t, x, lam):
        return np.zeros((x.size, x.size))


class LinearModel(DynamicsModel):
    """Time-invariant linear drift f(x) = A x, or time-varying via ``A_of_t``."""

    name = "linear"

    def __init__(self, A=None, B=None, D=None, A_of_t=None):
        if A is None and A_of_t is None:
            raise ValueError("need A or A_of_t")
        A0 = np.asarray(A if A is not None else A_of_t(0.0), dtype=np.float64)
        n = A0.shape[0]
        B = np.eye(n) if B is None else B
        D = np.zeros((n, n)) if D is None else D
        super().__init__(B, D, {})
        self._A = A0
        self._A_of_t = A_of_t

    def matrix(self, t):
        if self._A_of_t is None:
            return self._A
        return np.asarray(self._A_of_t(t), dtype=np.float64)

    def drift(self, t, x):
        return np.asarray(x, dtype=np.float64) @ self.matrix(t).T

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        A = self.matrix(t)
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    def lagrangian_hessian(self, t, x, lam):
        return np.zeros((x.size, x.size))


MODELS = {
    TwoBody2D.name: TwoBody2D,
    DoubleIntegrator.name: DoubleIntegrator,
}


def register_model(name, factory):
    """Make a model constructible by name from scenario files."""
    if name in MODELS:
        raise ValueError(f"model {name!r} already registered")
    MODELS[name] = factory


def make_model(name, **params):
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown dynamics model {name!r}; known: {sorted(MODELS)}") from None
    return factory(**params)


def fd_jacobian(model, t, x, step=None):
    """Central finite-difference Jacobian, the oracle for :meth:`jacobian`.

    The default step is ``1e-6 * max(1, |x|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    h = 1e-6 * max(1.0, np.linalg.norm(x)) if step is None else step
    J = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (model.drift(t, x + e) - model.drift(t, x - e)) / (2 * h)
    return J
