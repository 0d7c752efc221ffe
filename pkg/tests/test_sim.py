import numpy as np
import pytest
from scipy.linalg import expm

from gmmsteer import GmmDistribution, LinearModel, TimeGrid, TwoBody2D, estimate_cost, simulate
from gmmsteer.errors import NoDataError
from gmmsteer.sim import SimulationResult, cost_standard_error, particle_stream


class ConstantPolicy:
    def __init__(self, grid, u):
        self.grid = grid
        self.u = np.asarray(u, dtype=float)

    def control(self, k, X):
        return np.tile(self.u, (len(X), 1))


def fake_result(costs, diverged=None):
    costs = np.asarray(costs, dtype=float)
    P = costs.size
    diverged = np.zeros(P, dtype=bool) if diverged is None else np.asarray(diverged)
    return SimulationResult(np.zeros((P, 2, 1)), np.zeros((P, 1, 1)), costs, diverged, 0)


def test_matrix_exponential_oracle():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])  # spectral norm 1
    model = LinearModel(A=A)
    grid = TimeGrid(1.0, 101)
    x0 = np.array([1.0, 0.5])
    gmm = GmmDistribution.single(x0, np.zeros((2, 2)))
    res = simulate(model, ConstantPolicy(grid, [0.0, 0.0]), gmm, grid, 3, seed=0)
    # exactly the Euler propagator ...
    euler = np.linalg.matrix_power(np.eye(2) + grid.dt * A, 100) @ x0
    assert np.allclose(res.paths[:, -1], euler, rtol=1e-13, atol=0)
    # ... whose gap to expm is T |A|^2 dt / 2 = 0.5% to leading order
    exact = expm(A) @ x0
    err = np.linalg.norm(res.paths[:, -1] - exact, axis=1) / np.linalg.norm(exact)
    assert np.all(err <= 0.0051)


def test_substeps_converge():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    grid = TimeGrid(1.0, 11)
    gmm = GmmDistribution.single([1.0, 0.0], np.zeros((2, 2)))
    exact = expm(A) @ [1.0, 0.0]
    errs = [np.linalg.norm(simulate(LinearModel(A=A), ConstantPolicy(grid, [0, 0]), gmm, grid, 1, 0, s).paths[0, -1] - exact)
            for s in (1, 2, 4)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_constant_control_cost():
    grid = TimeGrid(2.5, 26)
    c = np.array([0.3, -1.2])
    model = LinearModel(A=np.zeros((2, 2)), D=0.1 * np.eye(2))
    res = simulate(model, ConstantPolicy(grid, c), GmmDistribution.single([0, 0], np.eye(2)), grid, 10, seed=4)
    assert np.allclose(res.per_particle_cost, (c @ c) * 2.5, rtol=1e-14)


def test_estimate_cost_examples():
    assert estimate_cost(fake_result([2.5] * 7)) == 2.5
    assert estimate_cost(fake_result([1.0, 3.0])) == 2.0
    assert estimate_cost(fake_result([0.0, 0.0, 0.0])) == 0.0
    assert estimate_cost(fake_result([1.0, np.nan, 3.0], [False, True, False])) == 2.0


def test_estimate_cost_no_survivors():
    with pytest.raises(NoDataError):
        estimate_cost(fake_result([np.nan], [True]))
    with pytest.raises(NoDataError):
        cost_standard_error(fake_result([1.0]))


def test_zero_control_run_costs_nothing():
    grid = TimeGrid(1.0, 11)
    model = LinearModel(A=-np.eye(1), D=np.ones((1, 1)))
    res = simulate(model, ConstantPolicy(grid, [0.0]), GmmDistribution.single([0.0], [[1.0]]), grid, 20, 1)
    assert estimate_cost(res) == 0.0


def test_noise_scaling():
    grid = TimeGrid(1.0, 21)
    gmm = GmmDistribution.single([0.0], [[0.0]])
    P = 20_000
    var = []
    for d, seed in ((0.5, 8), (1.0, 9)):
        res = simulate(LinearModel(A=np.zeros((1, 1)), D=[[d]]), ConstantPolicy(grid, [0.0]), gmm, grid, P, seed=seed)
        var.append(res.paths[:, -1, 0].var(ddof=1))
    # a Gaussian sample variance has relative standard error sqrt(2/P);
    # the ratio of two independent ones has sqrt(4/P)
    assert var[1] / var[0] == pytest.approx(4.0, rel=4 * np.sqrt(4 / P))
    assert var[0] == pytest.approx(0.25, rel=4 * np.sqrt(2 / P))
    assert var[1] == pytest.approx(1.0, rel=4 * np.sqrt(2 / P))


def test_divergence_flagged():
    grid = TimeGrid(1.0, 11)
    gmm = GmmDistribution.single([0.0], [[1.0]])

    class Blowup:
        def __init__(self):
            self.grid = grid

        def control(self, k, X):
            # pushes particles with positive start far out
            return np.where(X > 0, 1e5, 0.0)

    res = simulate(LinearModel(A=np.zeros((1, 1))), Blowup(), gmm, grid, 200, seed=2)
    assert res.diverged_count > 0
    assert np.all(np.isnan(res.per_particle_cost[res.diverged]))
    assert np.all(np.isnan(res.paths[res.diverged, -1]))
    assert np.all(np.isfinite(res.paths[~res.diverged, -1]))
    assert res.terminal_samples.shape == (200 - res.diverged_count, 1)
    assert estimate_cost(res) == 0.0


def test_singular_set_counts_as_divergence():
    grid = TimeGrid(1.0, 3)
    # velocity -2 AU/day with dt = 0.5 lands exactly on the Sun after one step
    start = GmmDistribution.single([1.0, 0.0, -2.0, 0.0], np.zeros((4, 4)))
    res = simulate(TwoBody2D(), ConstantPolicy(grid, [0.0, 0.0]), start, grid, 1, seed=0)
    assert res.diverged_count == 1
    assert np.isnan(res.per_particle_cost[0])


def test_seed_determinism_and_prefix_stability():
    grid = TimeGrid(1.0, 11)
    model = LinearModel(A=np.zeros((2, 2)), D=np.eye(2))
    gmm = GmmDistribution.from_arrays([0.5, 0.5], [[-1, 0], [1, 0]], [np.eye(2), np.eye(2)])
    pol = ConstantPolicy(grid, [0.1, 0.2])
    a = simulate(model, pol, gmm, grid, 50, seed=3)
    b = simulate(model, pol, gmm, grid, 50, seed=3)
    assert np.array_equal(a.paths, b.paths) and np.array_equal(a.per_particle_cost, b.per_particle_cost)
    # particle p only reads its own stream, so a larger run extends a smaller one
    c = simulate(model, pol, gmm, grid, 80, seed=3)
    assert np.array_equal(c.paths[:50], a.paths)
    d = simulate(model, pol, gmm, grid, 50, seed=4)
    assert not np.array_equal(d.paths, a.paths)


def test_particle_streams_distinct():
    draws = {particle_stream(7, p).random() for p in range(100)}
    assert len(draws) == 100
    assert particle_stream(7, 3).random() == particle_stream(7, 3).random()


def test_arguments_checked():
    grid = TimeGrid(1.0, 5)
    gmm = GmmDistribution.single([0.0], [[1.0]])
    m = LinearModel(A=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        simulate(m, ConstantPolicy(grid, [0.0]), gmm, grid, 0, 0)
    with pytest.raises(ValueError):
        simulate(m, ConstantPolicy(grid, [0.0]), gmm, grid, 1, 0, substeps=0)
    with pytest.raises(ValueError, match="grid"):
        simulate(m, ConstantPolicy(TimeGrid(2.0, 5), [0.0]), gmm, grid, 1, 0)
