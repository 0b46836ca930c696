import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from tsode.nn import Mlp
from tsode.ode import (
    BLOW_UP_NORM,
    LinearField,
    MlpField,
    SolverBlowUp,
    grad_through_solver,
    integrate,
    rk4_step,
)

from conftest import central_diff, rel_err

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def rotation_solution(t):
    # x' = ROT x from [0, 1]
    return np.array([np.sin(t), np.cos(t)])


def _loss_fn(f, x0, grid, W, substeps=4):
    def loss():
        X = integrate(f, x0, grid, substeps).states
        return float(np.sum(W * X))

    return loss


class TestRk4Step:
    def test_zero_field(self):
        x = np.array([1.0, -2.0])
        np.testing.assert_array_equal(rk4_step(lambda x, t: 0 * x, x, 0.0, 0.1), x)

    def test_exponential(self):
        out = rk4_step(lambda x, t: x, np.array([1.0]), 0.0, 0.1)
        assert abs(out[0] - 1.10517083) < 1e-7
        assert abs(out[0] - math.exp(0.1)) < 1e-7

    def test_rotation_quarter_turn(self):
        f = LinearField(ROT)
        n = 157
        traj = integrate(f, [0.0, 1.0], [0.0, math.pi / 2], substeps=n)
        assert math.pi / 2 / n == pytest.approx(0.01, rel=1e-3)
        np.testing.assert_allclose(traj.states[-1], [1.0, 0.0], atol=1e-8)

    def test_nonpositive_step(self):
        with pytest.raises(ValueError):
            rk4_step(lambda x, t: x, np.ones(1), 0.0, 0.0)


class TestIntegrate:
    def test_full_period(self):
        grid = np.linspace(0, 2 * np.pi, 100)
        traj = integrate(LinearField(ROT), [0.0, 1.0], grid)
        assert traj.states.shape == (100, 2)
        np.testing.assert_allclose(traj.states[-1], [0.0, 1.0], atol=1e-6)

    @pytest.mark.parametrize(
        "A, x0, exact",
        [
            (ROT, [0.0, 1.0], rotation_solution),
            (np.array([[1.0]]), [1.0], lambda t: np.array([np.exp(t)])),
            (np.array([[-0.5]]), [2.0], lambda t: np.array([2 * np.exp(-0.5 * t)])),
        ],
    )
    def test_fourth_order_convergence(self, A, x0, exact):
        T = 2.0

        def err(steps):
            grid = np.linspace(0, T, steps + 1)
            X = integrate(LinearField(A), x0, grid, substeps=1).states
            truth = np.array([exact(t) for t in grid])
            return np.max(np.abs(X - truth))

        ratio = err(10) / err(20)
        assert 12 <= ratio <= 20

    def test_blow_up_time(self):
        grid = np.linspace(0, 40, 401)
        with pytest.raises(SolverBlowUp) as info:
            integrate(LinearField([[1.0]]), [1.0], grid)
        expected = 12 * math.log(10)  # e^t crosses 1e12
        assert BLOW_UP_NORM == 1e12
        assert abs(info.value.t - expected) <= 0.05

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        net = Mlp([3, 5, 3], ["tanh", "identity"], rng)
        grid = np.linspace(0, 1, 11)
        a = integrate(MlpField(net), [0.1, 0.2, 0.3], grid).states
        b = integrate(MlpField(net), [0.1, 0.2, 0.3], grid).states
        assert a.tobytes() == b.tobytes()

    def test_grid_refinement(self):
        A = np.array([[-0.1, 1.0], [-1.0, -0.1]])
        coarse = integrate(LinearField(A), [1.0, 0.0], np.linspace(0, 5, 51)).states
        fine = integrate(LinearField(A), [1.0, 0.0], np.linspace(0, 5, 101)).states
        np.testing.assert_allclose(fine[::2], coarse, atol=1e-7)

    def test_batch_matches_rows(self):
        A = np.array([[0.0, 1.0], [-2.0, -0.3]])
        X0 = np.array([[1.0, 0.0], [0.5, -1.0]])
        grid = np.linspace(0, 3, 31)
        batch = integrate(LinearField(A), X0, grid).states
        for i in range(2):
            np.testing.assert_allclose(batch[:, i], integrate(LinearField(A), X0[i], grid).states, atol=1e-14)

    def test_non_uniform_grid(self):
        with pytest.raises(ValueError):
            integrate(LinearField(ROT), [0.0, 1.0], [0.0, 1.0, 3.0])


class TestGradThroughSolver:
    def test_zero_loss_gradient(self):
        grid = np.linspace(0, 1, 6)
        grads, dx0 = grad_through_solver(LinearField(ROT), [0.0, 1.0], grid, np.zeros((6, 2)))
        np.testing.assert_array_equal(grads[0], 0)
        np.testing.assert_array_equal(dx0, 0)

    def test_linear_finite_difference(self):
        rng = np.random.default_rng(3)
        f = LinearField(rng.normal(scale=0.5, size=(2, 2)))
        x0 = rng.normal(size=2)
        grid = np.linspace(0, 2, 21)
        W = rng.normal(size=(21, 2))
        (dA,), _ = grad_through_solver(f, x0, grid, W)
        assert rel_err(dA, central_diff(_loss_fn(f, x0, grid, W), f.A)) <= 1e-5

    def test_dx0_matches_state_transition(self):
        rng = np.random.default_rng(4)
        A = rng.normal(scale=0.4, size=(3, 3))
        T = 2.0
        grid = np.linspace(0, T, 41)
        g = rng.normal(size=3)
        W = np.zeros((41, 3))
        W[-1] = g
        _, dx0 = grad_through_solver(LinearField(A), rng.normal(size=3), grid, W)
        np.testing.assert_allclose(dx0, expm(A * T).T @ g, atol=1e-6)

    @settings(max_examples=12, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 50), st.sampled_from(["linear", "mlp"]))
    def test_finite_difference_random(self, seed, d, steps, kind):
        rng = np.random.default_rng(seed)
        if kind == "linear":
            f = LinearField(rng.normal(scale=0.5, size=(d, d)))
        else:
            f = MlpField(Mlp([d, 4, d], ["tanh", "identity"], rng))
        x0 = rng.normal(size=d)
        grid = np.linspace(0, 0.05 * steps, steps)
        W = rng.normal(size=(steps, d))
        grads, dx0 = grad_through_solver(f, x0, grid, W, substeps=2)
        loss = _loss_fn(f, x0, grid, W, substeps=2)
        for p, g in zip(f.parameters(), grads):
            assert rel_err(g, central_diff(loss, p)) < 1e-4
        x0c = x0.copy()
        assert rel_err(dx0, central_diff(_loss_fn(f, x0c, grid, W, substeps=2), x0c)) < 1e-4

    def test_reuses_tape(self):
        rng = np.random.default_rng(5)
        f = MlpField(Mlp([2, 3, 2], ["tanh", "identity"], rng))
        grid = np.linspace(0, 1, 5)
        W = rng.normal(size=(5, 2))
        _, tape = integrate(f, [0.3, -0.2], grid, record=True)
        a = grad_through_solver(f, [0.3, -0.2], grid, W, tape=tape)
        b = grad_through_solver(f, [0.3, -0.2], grid, W)
        for ga, gb in zip(a[0], b[0]):
            np.testing.assert_array_equal(ga, gb)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            grad_through_solver(LinearField(ROT), [0.0, 1.0], np.linspace(0, 1, 5), np.zeros((4, 2)))
