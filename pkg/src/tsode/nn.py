"""Small numpy neural-network engine with hand-written reverse mode.

Layers work on batches: dense inputs are ``(batch, features)`` and LSTM inputs
are ``(batch, steps, features)``. Every model exposes the same three methods
used by :func:`train`:

``forward(X) -> (Y, cache)``
``backward(cache, dY) -> (grads, dX)``   grads aligned with ``parameters()``
``parameters() -> list[np.ndarray]``     updated in place by optimizers
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Dense",
    "Mlp",
    "LstmLayer",
    "LstmForecaster",
    "Sgd",
    "Adam",
    "TrainResult",
    "TrainingDiverged",
    "train",
    "mse_loss",
    "mlp_forward",
    "mlp_backward",
    "lstm_forward",
    "lstm_backward",
    "glorot_uniform",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("relu", "tanh", "identity")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Dense:
    """Affine map followed by an elementwise activation."""

    def __init__(self, n_in: int, n_out: int, activation: str = "identity", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.W = glorot_uniform(rng, n_in, n_out, (n_out, n_in))
        self.b = np.zeros(n_out)

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]

    @property
    def n_params(self):
        return self.W.size + self.b.size

    def parameters(self):
        return [self.W, self.b]

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_in:
            raise ValueError(f"dense layer expects {self.n_in} inputs, got {X.shape[-1]}")
        Z = X @ self.W.T + self.b
        A = _activate(Z, self.activation)
        return A, (X, Z, A)

    def backward(self, cache, dA):
        X, Z, A = cache
        dZ = dA * _activation_grad(Z, A, self.activation)
        dW = dZ.T @ X if dZ.ndim == 2 else np.outer(dZ, X)
        db = dZ.sum(axis=0) if dZ.ndim == 2 else dZ
        return [dW, db], dZ @ self.W


class Mlp:
    """Chain of dense layers.

    ``sizes`` lists every width including input and output; ``activations``
    gives one entry per layer.
    """

    def __init__(self, sizes, activations, rng=None):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [Dense(a, b, act, rng) for a, b, act in zip(sizes[:-1], sizes[1:], activations)]

    @classmethod
    def from_layers(cls, layers):
        for a, b in zip(layers[:-1], layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")
        net = cls.__new__(cls)
        net.layers = list(layers)
        return net

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, X):
        caches = []
        for layer in self.layers:
            X, c = layer.forward(X)
            caches.append(c)
        return X, caches

    def backward(self, caches, dY):
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            g, dY = layer.backward(c, dY)
            grads = g + grads
        return grads, dY

    def __call__(self, X):
        return self.forward(X)[0]

    def architecture(self):
        return {
            "type": "mlp",
            "layers": [[l.n_in, l.n_out, l.activation] for l in self.layers],
        }


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net.forward(np.asarray(x, dtype=float))[0]


def mlp_backward(net: Mlp, x, upstream):
    """Parameter gradients and input gradient for output cotangent ``upstream``."""
    _, caches = net.forward(np.asarray(x, dtype=float))
    return net.backward(caches, np.asarray(upstream, dtype=float))


class LstmLayer:
    """Single LSTM layer, gates stacked as (input, forget, cell, output).

    ``W`` has shape ``(4*units, n_in + units)`` acting on ``[x_t, h_{t-1}]``.
    """

    def __init__(self, n_in: int, units: int, rng=None, forget_bias: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.units = units
        self.n_in = n_in
        self.W = np.concatenate(
            [glorot_uniform(rng, n_in + units, units, (units, n_in + units)) for _ in range(4)]
        )
        self.b = np.zeros(4 * units)
        self.b[units : 2 * units] = forget_bias

    @property
    def n_params(self):
        return self.W.size + self.b.size

    def parameters(self):
        return [self.W, self.b]

    def forward(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 2:
            xs = xs[None]
        B, T, D = xs.shape
        if D != self.n_in:
            raise ValueError(f"LSTM expects input dimension {self.n_in}, got {D}")
        u = self.units
        h = np.zeros((B, u))
        c = np.zeros((B, u))
        Wx, Wh = self.W[:, :D], self.W[:, D:]
        xproj = xs @ Wx.T + self.b
        H = np.empty((B, T, u))
        steps = []
        for t in range(T):
            z = xproj[:, t] + h @ Wh.T
            i = _sigmoid(z[:, :u])
            f = _sigmoid(z[:, u : 2 * u])
            g = np.tanh(z[:, 2 * u : 3 * u])
            o = _sigmoid(z[:, 3 * u :])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            H[:, t] = h
            steps.append((h_prev, c_prev, i, f, g, o, tc))
        return H, (xs, steps)

    def backward(self, cache, dH):
        """Backpropagation through time.

        ``dH`` is either ``(batch, units)`` (cotangent of the final hidden
        state only) or ``(batch, steps, units)`` (every hidden state).
        """
        xs, steps = cache
        B, T, D = xs.shape
        u = self.units
        dH = np.asarray(dH, dtype=float)
        if dH.ndim == 2:
            seq = np.zeros((B, T, u))
            seq[:, -1] = dH
            dH = seq
        Wh = self.W[:, D:]
        dW = np.zeros_like(self.W)
        db = np.zeros_like(self.b)
        dxs = np.empty_like(xs)
        dh = np.zeros((B, u))
        dc = np.zeros((B, u))
        for t in reversed(range(T)):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dh = dh + dH[:, t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
            )
            dW += dz.T @ np.concatenate([xs[:, t], h_prev], axis=1)
            db += dz.sum(axis=0)
            dxs[:, t] = dz @ self.W[:, :D]
            dh = dz @ Wh
            dc = dc * f
        return [dW, db], dxs


def lstm_forward(layer: LstmLayer, xs):
    """Hidden states for every step and the final hidden state."""
    H, _ = layer.forward(xs)
    return H, H[:, -1]


def lstm_backward(layer: LstmLayer, xs, upstream):
    _, cache = layer.forward(xs)
    return layer.backward(cache, upstream)


class LstmForecaster:
    """LSTM over the history window, final hidden state fed to a dense head."""

    def __init__(self, n_out: int, units: int = 32, hidden: int = 128, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.lstm = LstmLayer(1, units, rng)
        self.head = Mlp([units, hidden, n_out], ["relu", "identity"], rng)

    @property
    def n_params(self):
        return self.lstm.n_params + self.head.n_params

    def parameters(self):
        return self.lstm.parameters() + self.head.parameters()

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        H, lc = self.lstm.forward(X[..., None])
        Y, hc = self.head.forward(H[:, -1])
        return Y, (lc, hc)

    def backward(self, cache, dY):
        lc, hc = cache
        g_head, dh = self.head.backward(hc, dY)
        g_lstm, dxs = self.lstm.backward(lc, dh)
        return g_lstm + g_head, dxs[..., 0]

    def __call__(self, X):
        return self.forward(X)[0]

    def architecture(self):
        return {
            "type": "lstm_forecaster",
            "units": self.lstm.units,
            "hidden": self.head.layers[0].n_out,
            "n_out": self.head.n_out,
        }


# -- optimizers ---------------------------------------------------------------


class Sgd:
    def __init__(self, lr: float = 1e-2):
        if not lr >= 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr >= 0:
            raise ValueError("learning rate must be non-negative")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- training -----------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, message="loss became non-finite"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class TrainResult:
    initial_loss: float
    loss_history: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.loss_history[-1] if self.loss_history else self.initial_loss


def train(model, X, Y, *, epochs=200, batch_size=32, optimizer=None, seed=0, shuffle=True) -> TrainResult:
    """Minibatch MSE training. Deterministic for a fixed ``seed``.

    The loss history holds the sample-weighted mean batch loss of each epoch.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(X) != len(Y):
        raise ValueError("inputs and targets differ in length")
    optimizer = optimizer if optimizer is not None else Adam()
    rng = np.random.default_rng(seed)
    params = model.parameters()
    result = TrainResult(initial_loss=mse_loss(model.forward(X)[0], Y)[0])
    N = len(X)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(N) if shuffle else np.arange(N)
        total = 0.0
        for start in range(0, N, batch_size):
            idx = order[start : start + batch_size]
            pred, cache = model.forward(X[idx])
            loss, dpred = mse_loss(pred, Y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            grads, _ = model.backward(cache, dpred)
            optimizer.step(params, grads)
            total += loss * len(idx)
        result.loss_history.append(total / N)
    return result


# -- checkpoints --------------------------------------------------------------


def _build(arch):
    kind = arch["type"]
    if kind == "mlp":
        layers = arch["layers"]
        sizes = [layers[0][0]] + [l[1] for l in layers]
        return Mlp(sizes, [l[2] for l in layers])
    if kind == "lstm_forecaster":
        return LstmForecaster(arch["n_out"], arch["units"], arch["hidden"])
    raise ValueError(f"unknown architecture {kind!r}")


def save_checkpoint(model, path, seed=None):
    """JSON checkpoint: architecture, flat float64 parameters, seed.

    Floats are written with ``repr`` precision, so loading is bit-exact.
    """
    flat = np.concatenate([p.ravel() for p in model.parameters()]) if model.parameters() else np.zeros(0)
    doc = {"architecture": model.architecture(), "params": flat.tolist(), "seed": seed}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    model = _build(doc["architecture"])
    flat = np.asarray(doc["params"], dtype=float)
    offset = 0
    for p in model.parameters():
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    if offset != flat.size:
        raise ValueError(f"checkpoint has {flat.size} parameters, architecture needs {offset}")
    return model, doc.get("seed")
