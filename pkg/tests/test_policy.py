import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmsteer import (
    BridgeSolution,
    LtvTrajectory,
    MixturePolicy,
    SlPolicy,
    TimeGrid,
    eval_ml_control,
    eval_sl_control,
    ml_drift_approximation,
)
from gmmsteer.core import TransportPlan

N = 6
GRID = TimeGrid(1.0, N)


def make_bridge(rng, pair, center, n=2, m=1, cov_scale=0.1, A=None, drift=None):
    A = rng.normal(size=(N, n, n)) if A is None else np.broadcast_to(A, (N, n, n))
    mu = center + 0.05 * rng.normal(size=(N, n))
    ubar = rng.normal(size=(N - 1, m))
    covs = []
    for _ in range(N):
        G = rng.normal(size=(n, n))
        covs.append(cov_scale * (G @ G.T / n + 0.5 * np.eye(n)))
    F = np.einsum("kij,kj->ki", A, mu) if drift is None else drift(mu)
    ltv = LtvTrajectory(GRID, A, rng.normal(size=(n, m)), np.zeros((n, n)), mu, ubar, reference_drift=F)
    K = rng.normal(size=(N - 1, m, n))
    return BridgeSolution(pair, ltv, np.array(covs), K, cost=1.0)


def plan_for(pairs, masses, shape):
    lam = np.zeros(shape)
    for p, w in zip(pairs, masses):
        lam[p] = w
    return TransportPlan(lam)


def mixture(rng, centers, masses, **kw):
    pairs = [(i, 0) for i in range(len(centers))]
    bridges = [make_bridge(rng, p, np.asarray(c, dtype=float), **kw) for p, c in zip(pairs, centers)]
    return MixturePolicy(tuple(bridges), plan_for(pairs, masses, (len(centers), 1)), GRID)


class TestMixtureControl:
    def test_single_bridge_is_affine_law(self, rng):
        pol = mixture(rng, [[0.0, 0.0]], [1.0])
        br = pol.bridges[0]
        for k in range(N - 1):
            x = rng.normal(size=2)
            expected = br.gains[k] @ (x - br.ltv.reference_state[k]) + br.ltv.reference_control[k]
            assert np.allclose(eval_ml_control(pol, k, x), expected, rtol=1e-14, atol=1e-14)

    def test_dominant_bridge(self, rng):
        pol = mixture(rng, [[0.0, 0.0], [40.0, 0.0]], [0.5, 0.5], cov_scale=0.5)
        for b in range(2):
            for k in range(N - 1):
                x = pol.means[k, b]
                logp = pol.log_coef[k] - 0.5 * np.sum((np.einsum("bij,bj->bi", pol.whiten[k], x - pol.means[k])) ** 2, axis=1)
                assert logp[b] - logp[1 - b] >= 30
                expected = pol.bridges[b].control(k, x)
                assert np.allclose(eval_ml_control(pol, k, x), expected, rtol=0, atol=1e-10)

    def test_identical_bridges_merge(self, rng):
        br = make_bridge(rng, (0, 0), np.zeros(2))
        twin = BridgeSolution((1, 0), br.ltv, br.covariances, br.gains, br.cost)
        split = MixturePolicy((br, twin), plan_for([(0, 0), (1, 0)], [0.3, 0.7], (2, 1)), GRID)
        merged = MixturePolicy((br,), plan_for([(0, 0)], [1.0], (1, 1)), GRID)
        X = rng.normal(size=(20, 2))
        for k in range(N - 1):
            assert np.allclose(split.control(k, X), merged.control(k, X), rtol=1e-13, atol=1e-14)

    def test_reduces_to_sl(self, rng):
        br = make_bridge(rng, (0, 0), np.zeros(2))
        ml = MixturePolicy((br,), plan_for([(0, 0)], [1.0], (1, 1)), GRID)
        sl = SlPolicy(br)
        X = rng.normal(size=(50, 2))
        for k in range(N - 1):
            assert np.allclose(ml.control(k, X), sl.control(k, X), rtol=0, atol=1e-10)

    def test_batch_matches_single(self, rng):
        pol = mixture(rng, [[0, 0], [1, 1], [-1, 2]], [0.2, 0.3, 0.5])
        X = rng.normal(size=(8, 2))
        batch = pol.control(2, X)
        for p in range(8):
            assert np.allclose(pol.control(2, X[p]), batch[p], rtol=1e-14, atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.floats(-1e3, 1e3))
    def test_partition_of_unity(self, seed, count, offset):
        rng = np.random.default_rng(seed)
        masses = rng.dirichlet(np.ones(count))
        masses[-1] = 1.0 - masses[:-1].sum()
        pol = mixture(rng, rng.normal(scale=3, size=(count, 2)), masses)
        X = rng.normal(size=(10, 2)) + offset
        for k in range(N):
            W = pol.weights(k, X)
            assert np.all(W >= 0)
            assert np.allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_continuity(self, rng):
        pol = mixture(rng, [[0, 0], [1.5, 0.5]], [0.4, 0.6], cov_scale=0.5)
        h = 1e-6
        for _ in range(50):
            x = rng.normal(size=2)
            d = rng.normal(size=2)
            d /= np.linalg.norm(d)
            k = int(rng.integers(0, N - 1))
            # local Lipschitz scale from the gains and the weight gradients
            lip = np.abs(pol.gains[k]).sum(axis=(1, 2)).max() + 10 * np.abs(pol.control(k, x)).max() + 10
            jump = np.abs(pol.control(k, x + h * d) - pol.control(k, x)).max()
            assert jump <= lip * h

    def test_distant_point_keeps_log_domain_weights(self, rng):
        pol = mixture(rng, [[0, 0], [5, 0]], [0.5, 0.5], cov_scale=1e-4)
        W = pol.weights(0, np.array([1e3, 0.0]))
        assert np.all(np.isfinite(W)) and W.sum() == pytest.approx(1.0, abs=1e-12)

    def test_far_fallback_uses_nearest(self, rng, caplog):
        pol = mixture(rng, [[0, 0], [5, 0]], [0.5, 0.5], cov_scale=1e-4)
        # far enough that every squared Mahalanobis distance overflows
        x = np.array([1e170, 0.0])
        with caplog.at_level(logging.WARNING, logger="gmmsteer.policy"):
            W = pol.weights(0, x)
        maha = np.sum(np.einsum("bij,bj->bi", pol.whiten[0], (x - pol.means[0]) / 1e170) ** 2, axis=1)
        expected = np.zeros(2)
        expected[np.argmin(maha)] = 1.0
        assert np.array_equal(W, expected)
        assert "far from every bridge" in caplog.text

    def test_node_range(self, rng):
        pol = mixture(rng, [[0, 0]], [1.0])
        with pytest.raises(IndexError):
            pol.control(N - 1, np.zeros(2))

    def test_validation(self, rng):
        br = make_bridge(rng, (0, 0), np.zeros(2))
        with pytest.raises(ValueError, match="zero transport mass"):
            MixturePolicy((br,), TransportPlan(np.zeros((1, 1))), GRID)
        other = make_bridge(rng, (1, 0), np.zeros(2))
        with pytest.raises(ValueError, match="sum"):
            MixturePolicy((br, other), plan_for([(0, 0), (1, 0)], [0.3, 0.3], (2, 1)), GRID)
        with pytest.raises(ValueError, match="grid"):
            MixturePolicy((br,), plan_for([(0, 0)], [1.0], (1, 1)), TimeGrid(2.0, N))

    def test_arrays_read_only(self, rng):
        pol = mixture(rng, [[0, 0]], [1.0])
        with pytest.raises(ValueError):
            pol.gains[0, 0, 0, 0] = 1.0


class TestSlControl:
    def test_at_reference(self, rng):
        pol = SlPolicy(make_bridge(rng, (0, 0), np.zeros(2)))
        for k in range(N - 1):
            assert np.array_equal(eval_sl_control(pol, k, pol.reference_state[k]), pol.reference_control[k])

    def test_zero_gain(self, rng):
        br = make_bridge(rng, (0, 0), np.zeros(2))
        flat = BridgeSolution(br.pair, br.ltv, br.covariances, np.zeros_like(br.gains), br.cost)
        pol = SlPolicy(flat)
        assert np.array_equal(pol.control(1, rng.normal(size=(4, 2))), np.tile(pol.reference_control[1], (4, 1)))

    def test_affine_identity(self, rng):
        pol = SlPolicy(make_bridge(rng, (0, 0), np.zeros(2)))
        for k in range(N - 1):
            x1, x2 = rng.normal(size=(2, 2))
            mu = pol.reference_state[k]
            lhs = pol.control(k, x1) + pol.control(k, x2) - pol.control(k, mu)
            assert np.allclose(lhs, pol.control(k, x1 + x2 - mu), rtol=1e-13, atol=1e-13)


class TestDriftApproximation:
    def test_single_bridge(self, rng):
        pol = mixture(rng, [[0, 0]], [1.0])
        br = pol.bridges[0]
        for k in range(N):
            x = rng.normal(size=2)
            mu = br.ltv.reference_state[k]
            expected = br.ltv.reference_drift[k] + br.ltv.A[k] @ (x - mu)
            assert np.allclose(ml_drift_approximation(pol, k, x), expected, rtol=1e-14, atol=1e-14)

    def test_dominant_bridge(self, rng):
        pol = mixture(rng, [[0.0, 0.0], [40.0, 0.0]], [0.5, 0.5], cov_scale=0.5,
                      drift=lambda mu: np.sin(mu))
        for b in range(2):
            for k in range(N):
                x = pol.means[k, b]
                assert np.allclose(ml_drift_approximation(pol, k, x), np.sin(x), rtol=0, atol=1e-10)

    def test_exact_for_linear_dynamics(self, rng):
        A = np.array([[0.2, 1.0], [-1.0, 0.1]])
        pol = mixture(rng, [[0, 0], [2, 1], [-1, 1]], [0.2, 0.3, 0.5], A=A)
        X = rng.normal(size=(30, 2)) * 3
        for k in range(N):
            assert np.allclose(ml_drift_approximation(pol, k, X), X @ A.T, rtol=1e-12, atol=1e-12)

    def test_needs_reference_drift(self, rng):
        br = make_bridge(rng, (0, 0), np.zeros(2))
        bare = LtvTrajectory(GRID, br.ltv.A, br.ltv.B, br.ltv.D, br.ltv.reference_state, br.ltv.reference_control)
        pol = MixturePolicy((BridgeSolution((0, 0), bare, br.covariances, br.gains, 1.0),),
                            plan_for([(0, 0)], [1.0], (1, 1)), GRID)
        with pytest.raises(ValueError):
            ml_drift_approximation(pol, 0, np.zeros(2))
