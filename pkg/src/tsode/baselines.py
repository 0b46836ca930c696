"""Comparison forecasters: repeater, seasonal ARMA, dense net, LSTM, latent ODE.

Every forecaster follows the same two-call protocol::

    model = SomeForecaster(...).fit(train_series, m, n, seed)
    model.predict(history)          # (m,) -> (n,)   or   (B, m) -> (B, n)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .nn import Adam, Dense, LstmForecaster, Mlp, train
from .ode import MlpField, SolverBlowUp, grad_through_solver, integrate
from .optim import minimize_with_restarts
from .series import window_arrays

log = logging.getLogger(__name__)

__all__ = [
    "repeater",
    "Repeater",
    "SeasonalArimaModel",
    "fit_sarima",
    "sarima_residuals",
    "sarima_forecast",
    "Sarima",
    "FcnnForecaster",
    "LstmModel",
    "LatentOdeForecaster",
    "fcnn_forecast",
    "lstm_forecast",
    "latent_ode_forecast",
]


def _as_batch(history):
    H = np.asarray(history, dtype=float)
    return (H[None], True) if H.ndim == 1 else (H, False)


def _unbatch(Y, single):
    return Y[0] if single else Y


# -- repeater -----------------------------------------------------------------


def repeater(history, n):
    """Return the history window as the forecast; requires ``m == n``."""
    history = np.asarray(history, dtype=float)
    if history.shape[-1] != n:
        raise ValueError(f"repeater needs m == n, got m={history.shape[-1]}, n={n}")
    return history.copy()


class Repeater:
    name = "repeater"

    def fit(self, train_series=None, m=None, n=None, seed=0):
        self.n = n
        return self

    def predict(self, history):
        history = np.asarray(history, dtype=float)
        return repeater(history, self.n if self.n is not None else history.shape[-1])

    def to_dict(self):
        return {"type": "repeater"}


# -- seasonal ARMA ------------------------------------------------------------


@dataclass(frozen=True)
class SeasonalArimaModel:
    """``x_t = c + phi * x_{t-period} + theta * e_{t-1} + e_t``."""

    c: float
    phi: float
    theta: float
    sigma_res: float
    period: int = 24

    def __post_init__(self):
        if not self.sigma_res >= 0:
            raise ValueError("residual std must be non-negative")

    def to_dict(self):
        return {"type": "sarima", "c": self.c, "phi": self.phi, "theta": self.theta,
                "sigma_res": self.sigma_res, "period": self.period}


def sarima_residuals(x, c, phi, theta, period=24):
    """One-step residuals ``e_t`` for ``t >= period`` with ``e_{period-1} = 0``.

    Works along the last axis, so a batch of windows is handled at once.
    """
    x = np.asarray(x, dtype=float)
    u = x[..., period:] - c - phi * x[..., :-period]
    # e_t + theta * e_{t-1} = u_t
    return lfilter([1.0], [1.0, theta], u, axis=-1)


def fit_sarima(train_series, period: int = 24, seed: int = 0) -> SeasonalArimaModel:
    """Conditional-sum-of-squares fit of ``(c, phi, theta)`` by Nelder-Mead."""
    x = np.asarray(getattr(train_series, "values", train_series), dtype=float)
    if len(x) <= 2 * period:
        raise ValueError(f"need more than {2 * period} samples to fit a period-{period} model")
    lagged, current = x[:-period], x[period:]
    phi0 = float(np.corrcoef(lagged, current)[0, 1]) if np.std(lagged) > 0 and np.std(current) > 0 else 0.0
    c0 = float(np.mean(current) - phi0 * np.mean(lagged))

    def css(p):
        c, phi, theta = p
        e = sarima_residuals(x, c, phi, theta, period)
        return float(np.mean(e * e))

    res = minimize_with_restarts(
        css,
        [c0, phi0, 0.0],
        restarts=2,
        seed=seed,
        step=[0.1, 0.1, 0.1],
        lower=[-np.inf, -np.inf, -0.999],
        upper=[np.inf, np.inf, 0.999],
        xatol=1e-10,
        fatol=1e-16,
        max_fev=4000,
    )
    if not np.isfinite(res.fun):
        raise RuntimeError("seasonal ARMA fit did not converge")
    c, phi, theta = (float(v) for v in res.x)
    return SeasonalArimaModel(c, phi, theta, math.sqrt(res.fun), period)


def sarima_forecast(model: SeasonalArimaModel, history, n: int) -> np.ndarray:
    """Run the fitted recurrence forward with future shocks set to zero."""
    H, single = _as_batch(history)
    p = model.period
    if H.shape[1] < p:
        raise ValueError(f"history of length {H.shape[1]} is shorter than the period {p}")
    if H.shape[1] > p:
        e_last = sarima_residuals(H, model.c, model.phi, model.theta, p)[:, -1]
    else:
        e_last = np.zeros(len(H))
    buf = np.concatenate([H, np.zeros((len(H), n))], axis=1)
    m = H.shape[1]
    for j in range(n):
        buf[:, m + j] = model.c + model.phi * buf[:, m + j - p] + (model.theta * e_last if j == 0 else 0.0)
    return _unbatch(buf[:, m:], single)


class Sarima:
    """Seasonal ARMA forecaster.

    The fit is deterministic: restarts always use seed 0, so repeated runs
    on the same data give the same model whatever seed the caller passes.
    """

    name = "arima"

    def __init__(self, period: int = 24):
        self.period = period

    def fit(self, train_series, m, n, seed=0):
        self.model = fit_sarima(train_series, self.period, seed=0)
        self.n = n
        return self

    def predict(self, history):
        return sarima_forecast(self.model, history, self.n)

    def to_dict(self):
        return self.model.to_dict()


# -- neural forecasters -------------------------------------------------------


def _train_windows(train_series, m, n, stride):
    values = np.asarray(getattr(train_series, "values", train_series), dtype=float)
    return window_arrays(values, m, n, stride)


class FcnnForecaster:
    """``m -> hidden (relu) -> n`` dense network."""

    name = "fcnn"

    def __init__(self, hidden=128, epochs=200, batch_size=32, lr=1e-3, stride=1):
        self.hidden, self.epochs, self.batch_size, self.lr, self.stride = hidden, epochs, batch_size, lr, stride

    def fit(self, train_series, m, n, seed=0):
        H, Y = _train_windows(train_series, m, n, self.stride)
        return self.fit_windows(H, Y, seed)

    def fit_windows(self, H, Y, seed=0):
        rng = np.random.default_rng(seed)
        self.net = Mlp([H.shape[1], self.hidden, Y.shape[1]], ["relu", "identity"], rng)
        self.result = train(self.net, H, Y, epochs=self.epochs, batch_size=self.batch_size,
                            optimizer=Adam(self.lr), seed=seed)
        return self

    def predict(self, history):
        H, single = _as_batch(history)
        return _unbatch(self.net(H), single)


class LstmModel:
    """LSTM(units) over the history, then ``hidden`` relu, then ``n`` outputs."""

    name = "lstm"

    def __init__(self, units=32, hidden=128, epochs=200, batch_size=32, lr=1e-3, stride=1):
        self.units, self.hidden = units, hidden
        self.epochs, self.batch_size, self.lr, self.stride = epochs, batch_size, lr, stride

    def fit(self, train_series, m, n, seed=0):
        H, Y = _train_windows(train_series, m, n, self.stride)
        return self.fit_windows(H, Y, seed)

    def fit_windows(self, H, Y, seed=0):
        rng = np.random.default_rng(seed)
        self.net = LstmForecaster(Y.shape[1], self.units, self.hidden, rng)
        self.result = train(self.net, H, Y, epochs=self.epochs, batch_size=self.batch_size,
                            optimizer=Adam(self.lr), seed=seed)
        return self

    def predict(self, history):
        H, single = _as_batch(history)
        return _unbatch(self.net(H), single)


class LatentOdeForecaster:
    """Encoder -> initial latent state -> learned vector field -> linear decoder.

    The latent state starts at the last history sample and is integrated over
    ``n`` further grid steps (time measured in grid steps). Trained end to end
    on MSE with gradients through the unrolled solver. A solver blow-up stops
    training and restores the last parameters that integrated cleanly; the
    reason is kept in ``halted``.
    """

    name = "latent_ode"

    def __init__(self, latent=15, enc_hidden=64, field_hidden=32, iterations=500,
                 batch_size=32, lr=3e-3, substeps=4, stride=1, field_init_scale=0.1):
        self.latent, self.enc_hidden, self.field_hidden = latent, enc_hidden, field_hidden
        self.iterations, self.batch_size, self.lr = iterations, batch_size, lr
        self.substeps, self.stride = substeps, stride
        self.field_init_scale = field_init_scale
        self.halted = None

    def _init(self, m, n, seed):
        rng = np.random.default_rng(seed)
        self.m, self.n = m, n
        self.encoder = Mlp([m, self.enc_hidden, self.latent], ["tanh", "identity"], rng)
        self.field = MlpField(Mlp([self.latent, self.field_hidden, self.latent], ["tanh", "identity"], rng))
        # start from slow dynamics so early trajectories stay near the encoded state
        self.field.net.layers[-1].W *= self.field_init_scale
        self.decoder = Dense(self.latent, 1, "identity", rng)

    @property
    def n_params(self):
        return self.encoder.n_params + self.field.net.n_params + self.decoder.n_params

    def parameters(self):
        return self.encoder.parameters() + self.field.parameters() + self.decoder.parameters()

    def _grid(self):
        return np.arange(self.n + 1, dtype=float)

    def trajectory(self, H):
        """Latent states at grid steps ``0..n`` for a batch of histories, ``(n+1, B, latent)``."""
        z0 = self.encoder(H)
        return integrate(self.field, z0, self._grid(), self.substeps).states

    def _loss_and_grads(self, H, Y):
        z0, enc_cache = self.encoder.forward(H)
        traj, tape = integrate(self.field, z0, self._grid(), self.substeps, record=True)
        Z = traj.states[1:]  # (n, B, latent)
        pred = (Z @ self.decoder.W.T)[..., 0] + self.decoder.b[0]  # (n, B)
        resid = pred - Y.T
        loss = float(np.mean(resid * resid))
        dpred = 2.0 * resid / resid.size
        dW = np.einsum("nb,nbl->l", dpred, Z)[None, :]
        db = np.array([dpred.sum()])
        state_grads = np.zeros_like(traj.states)
        state_grads[1:] = dpred[..., None] * self.decoder.W[0]
        g_field, dz0 = grad_through_solver(self.field, z0, self._grid(), state_grads, self.substeps, tape)
        g_enc, _ = self.encoder.backward(enc_cache, dz0)
        return loss, g_enc + g_field + [dW, db]

    def fit(self, train_series, m, n, seed=0):
        H, Y = _train_windows(train_series, m, n, self.stride)
        return self.fit_windows(H, Y, seed)

    def fit_windows(self, H, Y, seed=0):
        H = np.asarray(H, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if len(H) == 0:
            raise ValueError("no training windows")
        self._init(H.shape[1], Y.shape[1], seed)
        rng = np.random.default_rng(seed)
        opt = Adam(self.lr)
        params = self.parameters()
        self.loss_history = []
        self.halted = None
        saved = None  # parameters before the last update, which integrated cleanly
        for it in range(1, self.iterations + 1):
            idx = rng.choice(len(H), size=min(self.batch_size, len(H)), replace=False)
            try:
                loss, grads = self._loss_and_grads(H[idx], Y[idx])
            except SolverBlowUp as exc:
                self.halted = (it, str(exc))
                log.warning("latent ODE training halted at iteration %d: %s", it, exc)
                if saved is not None:
                    for p, s in zip(params, saved):
                        p[...] = s
                break
            self.loss_history.append(loss)
            saved = [p.copy() for p in params]
            opt.step(params, grads)
        return self

    def predict(self, history):
        H, single = _as_batch(history)
        Z = self.trajectory(H)[1:]
        pred = (Z @ self.decoder.W.T)[..., 0] + self.decoder.b[0]
        return _unbatch(pred.T, single)


def fcnn_forecast(train_series, m, n, seed=0, **opts):
    return FcnnForecaster(**opts).fit(train_series, m, n, seed)


def lstm_forecast(train_series, m, n, seed=0, **opts):
    return LstmModel(**opts).fit(train_series, m, n, seed)


def latent_ode_forecast(train_series, m, n, seed=0, **opts):
    return LatentOdeForecaster(**opts).fit(train_series, m, n, seed)
