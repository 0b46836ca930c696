import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsode.nn import (
    Adam,
    Dense,
    LstmForecaster,
    LstmLayer,
    Mlp,
    Sgd,
    TrainingDiverged,
    load_checkpoint,
    lstm_backward,
    lstm_forward,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
    train,
)
from tsode.series import synth, window_arrays

from conftest import central_diff, rel_err


def _mse(pred, y):
    return float(np.mean((pred - y) ** 2))


def _assert_fd(model, X, Y, tol=1e-4, eps=1e-5):
    pred, cache = model.forward(X)
    dY = 2 * (pred - Y) / pred.size
    grads, dX = model.backward(cache, dY)

    def loss():
        return _mse(model.forward(X)[0], Y)

    for p, g in zip(model.parameters(), grads):
        np.testing.assert_array_less(rel_err(g, central_diff(loss, p, eps)), tol)
    Xc = X.copy()

    def loss_x():
        return _mse(model.forward(Xc)[0], Y)

    np.testing.assert_array_less(rel_err(dX, central_diff(loss_x, Xc, eps)), tol)


class TestDense:
    def test_identity_network(self):
        layer = Dense(3, 3)
        layer.W[...] = np.eye(3)
        net = Mlp.from_layers([layer])
        np.testing.assert_array_equal(mlp_forward(net, [1.0, -2.0, 3.0]), [1.0, -2.0, 3.0])

    def test_relu(self):
        layer = Dense(2, 2, "relu")
        layer.W[...] = np.eye(2)
        np.testing.assert_array_equal(mlp_forward(Mlp.from_layers([layer]), [-1.0, 2.0]), [0.0, 2.0])

    def test_param_count(self):
        assert Mlp([100, 128, 100], ["relu", "identity"]).n_params == 25_828
        assert Dense(7, 3).n_params == 7 * 3 + 3

    def test_glorot_bounds(self):
        layer = Dense(30, 50, rng=np.random.default_rng(0))
        assert np.max(np.abs(layer.W)) <= np.sqrt(6 / 80)
        np.testing.assert_array_equal(layer.b, 0)

    def test_dimension_mismatch(self):
        net = Mlp([3, 2], ["identity"])
        with pytest.raises(ValueError):
            mlp_forward(net, np.ones(4))
        with pytest.raises(ValueError):
            Mlp.from_layers([Dense(3, 4), Dense(5, 2)])

    def test_zero_upstream(self, rng):
        net = Mlp([3, 4, 2], ["tanh", "identity"], rng)
        grads, dx = mlp_backward(net, rng.normal(size=3), np.zeros(2))
        for g in grads:
            np.testing.assert_array_equal(g, 0)
        np.testing.assert_array_equal(dx, 0)

    def test_linear_closed_form(self, rng):
        net = Mlp([3, 2], ["identity"], rng)
        x, y = rng.normal(size=3), rng.normal(size=2)
        r = net.layers[0].W @ x + net.layers[0].b - y
        # loss 1/2 |Wx + b - y|^2 has upstream r
        (dW, db), _ = mlp_backward(net, x, r)
        np.testing.assert_allclose(dW, np.outer(r, x), rtol=1e-14)
        np.testing.assert_allclose(db, r, rtol=1e-14)

    @pytest.mark.parametrize("acts", [["tanh", "identity"], ["relu", "identity"], ["tanh", "tanh"]])
    def test_finite_difference(self, rng, acts):
        net = Mlp([3, 4, 2], acts, rng)
        X = rng.normal(size=(5, 3))
        _assert_fd(net, X, rng.normal(size=(5, 2)))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.lists(st.integers(1, 8), min_size=2, max_size=4))
    def test_finite_difference_random(self, seed, sizes):
        rng = np.random.default_rng(seed)
        acts = ["tanh"] * (len(sizes) - 2) + ["identity"]
        net = Mlp(sizes, acts, rng)
        X = rng.normal(size=(3, sizes[0]))
        _assert_fd(net, X, rng.normal(size=(3, sizes[-1])))


def _cell_complex(W, b, x, units):
    """Single LSTM step from zero state, written out directly; works on complex inputs."""
    z = W[:, : len(x)] @ x + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    i = sig(z[:units])
    g = np.tanh(z[2 * units : 3 * units])
    o = sig(z[3 * units :])
    return o * np.tanh(i * g)


class TestLstm:
    def test_param_count(self):
        assert LstmLayer(1, 32).n_params == 4_352
        assert LstmLayer(3, 5).n_params == 4 * (5 * 8 + 5)

    def test_zero_weights(self):
        layer = LstmLayer(2, 3)
        layer.W[...] = 0
        layer.b[...] = 0
        _, h = lstm_forward(layer, np.ones((1, 4, 2)))
        np.testing.assert_array_equal(h, 0)

    def test_length_one_is_single_step(self, rng):
        layer = LstmLayer(2, 3, rng)
        x = rng.normal(size=2)
        _, h = lstm_forward(layer, x[None, None, :])
        np.testing.assert_allclose(h[0], _cell_complex(layer.W, layer.b, x, 3), rtol=1e-14)

    def test_length_one_gradient_complex_step(self, rng):
        units, x = 3, rng.normal(size=2)
        layer = LstmLayer(2, units, rng)
        u = rng.normal(size=units)
        (dW, db), _ = lstm_backward(layer, x[None, None, :], u[None])
        h = 1e-30
        for P, G in ((layer.W, dW), (layer.b, db)):
            oracle = np.zeros_like(P)
            for idx in np.ndindex(P.shape):
                Pc = P.astype(complex)
                Pc[idx] += 1j * h
                W = Pc if P is layer.W else layer.W
                b = Pc if P is layer.b else layer.b
                oracle[idx] = (u @ _cell_complex(W, b, x, units)).imag / h
            np.testing.assert_allclose(G, oracle, rtol=1e-10, atol=1e-14)

    def test_zero_upstream(self, rng):
        layer = LstmLayer(1, 4, rng)
        (dW, db), dx = lstm_backward(layer, rng.normal(size=(2, 5, 1)), np.zeros((2, 4)))
        assert not dW.any() and not db.any() and not dx.any()

    @pytest.mark.parametrize("full_sequence", [False, True])
    def test_finite_difference(self, rng, full_sequence):
        layer = LstmLayer(2, 4, rng)
        xs = rng.normal(size=(3, 5, 2))
        shape = (3, 5, 4) if full_sequence else (3, 4)
        up = rng.normal(size=shape)

        def loss():
            H, _ = layer.forward(xs)
            return float(np.sum((H if full_sequence else H[:, -1]) * up))

        (dW, db), dxs = lstm_backward(layer, xs, up)
        assert rel_err(dW, central_diff(loss, layer.W)) < 1e-4
        assert rel_err(db, central_diff(loss, layer.b)) < 1e-4
        assert rel_err(dxs, central_diff(loss, xs)) < 1e-4

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 8), st.integers(1, 4))
    def test_finite_difference_random(self, seed, units, steps, n_in):
        rng = np.random.default_rng(seed)
        layer = LstmLayer(n_in, units, rng)
        xs = rng.normal(size=(2, steps, n_in))
        up = rng.normal(size=(2, units))

        def loss():
            return float(np.sum(layer.forward(xs)[0][:, -1] * up))

        (dW, db), _ = lstm_backward(layer, xs, up)
        assert rel_err(dW, central_diff(loss, layer.W)) < 1e-4
        assert rel_err(db, central_diff(loss, layer.b)) < 1e-4

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lstm_forward(LstmLayer(2, 3), np.ones((1, 4, 3)))

    def test_forecaster_finite_difference(self, rng):
        model = LstmForecaster(3, units=4, hidden=5, rng=rng)
        _assert_fd(model, rng.normal(size=(2, 6)), rng.normal(size=(2, 3)))

    def test_forecaster_param_count(self):
        # LSTM 4352 + dense 32->128 (4224) + dense 128->100 (12900)
        assert LstmForecaster(100).n_params == 4_352 + 4_224 + 12_900


class TestOptimizers:
    def test_sgd_step(self):
        p = np.array([1.0, 2.0])
        Sgd(0.1).step([p], [np.array([1.0, -1.0])])
        np.testing.assert_allclose(p, [0.9, 2.1])

    def test_adam_first_step_is_lr_sign(self):
        p = np.array([1.0, -1.0])
        Adam(0.01).step([p], [np.array([3.0, -0.5])])
        np.testing.assert_allclose(p, [0.99, -0.99], rtol=1e-6)

    def test_adam_moment_shapes(self):
        opt = Adam()
        params = [np.zeros((2, 3)), np.zeros(4)]
        opt.step(params, [np.ones((2, 3)), np.ones(4)])
        assert [m.shape for m in opt.m] == [(2, 3), (4,)]


class TestTrain:
    def test_linear_regression(self, rng):
        X = rng.uniform(-1, 1, size=(64, 1))
        net = Mlp([1, 1], ["identity"], rng)
        train(net, X, 2 * X, epochs=400, batch_size=16, optimizer=Adam(0.05), seed=0)
        assert abs(net.layers[0].W[0, 0] - 2) < 1e-3

    def test_zero_lr_fixed_point(self, rng):
        net = Mlp([2, 3, 1], ["tanh", "identity"], rng)
        before = [p.copy() for p in net.parameters()]
        train(net, rng.normal(size=(10, 2)), rng.normal(size=(10, 1)), epochs=3, optimizer=Sgd(0.0))
        for a, b in zip(before, net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_bit_reproducible(self, rng):
        X, Y = rng.normal(size=(40, 3)), rng.normal(size=(40, 2))
        runs = []
        for _ in range(2):
            net = Mlp([3, 8, 2], ["relu", "identity"], np.random.default_rng(5))
            res = train(net, X, Y, epochs=5, seed=9)
            runs.append((np.concatenate([p.ravel() for p in net.parameters()]).tobytes(), res.loss_history))
        assert runs[0] == runs[1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self, rng):
        net = Mlp([1, 1], ["identity"], rng)
        X = np.ones((4, 1))
        with pytest.raises(TrainingDiverged) as info:
            train(net, X, 1e200 * X, epochs=3, optimizer=Sgd(1e200))
        assert info.value.epoch >= 1

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(Mlp([1, 1], ["identity"]), np.zeros((0, 1)), np.zeros((0, 1)))

    def test_fcnn_two_tone_smoke(self):
        ts = synth("two_tone", 600, 0.0, 60.0)
        H, Y = window_arrays(ts.values, 100, 100)
        net = Mlp([100, 128, 100], ["relu", "identity"], np.random.default_rng(0))
        res = train(net, H, Y, epochs=200, batch_size=32, seed=0)
        assert res.final_loss * 10 <= res.initial_loss


class TestCheckpoint:
    def test_mlp_round_trip(self, tmp_path, rng):
        net = Mlp([4, 6, 2], ["tanh", "identity"], rng)
        save_checkpoint(net, tmp_path / "m.json", seed=11)
        loaded, seed = load_checkpoint(tmp_path / "m.json")
        assert seed == 11
        for a, b in zip(net.parameters(), loaded.parameters()):
            assert a.tobytes() == b.tobytes()
        X = rng.normal(size=(3, 4))
        assert net(X).tobytes() == loaded(X).tobytes()

    def test_lstm_round_trip(self, tmp_path, rng):
        model = LstmForecaster(3, units=4, hidden=5, rng=rng)
        save_checkpoint(model, tmp_path / "l.json", seed=2)
        loaded, _ = load_checkpoint(tmp_path / "l.json")
        X = rng.normal(size=(2, 7))
        assert model(X).tobytes() == loaded(X).tobytes()
