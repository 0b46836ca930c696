"""Forecasting with the explicit solution of a linear ODE instead of the ODE.

With simple eigenvalues ``alpha_k +- i beta_k`` a single observed component of
``x' = A x`` is

    X(t) = sum_k e^{alpha_k s} [C_{2k-1} (cos beta_k s - sin beta_k s)
                               + C_{2k}   (cos beta_k s + sin beta_k s)],  s = t - t0

so a model with ``K`` modes has ``3K + 1`` parameters (``alpha``, ``beta``,
``C``, ``t0``) instead of the ``(2K)^2`` entries of a system matrix. Fitting is
two-stage: frequencies, amplitudes and shift on one sample, then an encoder
network that maps each history window to its own amplitudes and shift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linear_node import LinearOdeSystem
from .nn import Adam, Mlp, TrainResult, train
from .optim import minimize_with_restarts
from .series import window_arrays
from .spectrum import companion_from_char_poly

__all__ = [
    "ClosedFormModel",
    "ClosedFormFit",
    "FrequencyEstimate",
    "EncoderModel",
    "ClosedFormOverflow",
    "FrequencyEstimationError",
    "basis",
    "evaluate",
    "derivatives",
    "periodogram",
    "estimate_frequencies",
    "fit_closed_form",
    "train_encoder",
    "forecast",
    "ClosedFormForecaster",
    "companion_system",
    "MAX_EXPONENT",
]

MAX_EXPONENT = 700.0


class ClosedFormOverflow(OverflowError):
    pass


class FrequencyEstimationError(ValueError):
    def __init__(self, found, wanted):
        super().__init__(f"found {found} spectral peaks above the noise floor, need {wanted}")
        self.found = found


def _frozen(v):
    a = np.array(v, dtype=float, ndmin=1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ClosedFormModel:
    """Parameters of a ``K``-mode closed-form solution; betas kept ascending."""

    alphas: np.ndarray
    betas: np.ndarray
    C: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        alphas, betas, C = _frozen(self.alphas), _frozen(self.betas), _frozen(self.C)
        K = len(betas)
        if K < 1:
            raise ValueError("need at least one mode")
        if alphas.shape != (K,) or C.shape != (2 * K,):
            raise ValueError(f"shapes disagree: {K} betas, {alphas.shape} alphas, {C.shape} C")
        if np.any(betas < 0):
            raise ValueError("angular frequencies must be non-negative")
        if np.any(np.diff(betas) < 0):
            order = np.argsort(betas, kind="stable")
            alphas, betas = _frozen(alphas[order]), _frozen(betas[order])
            C = _frozen(C.reshape(K, 2)[order].ravel())
        vals = np.concatenate([alphas, betas, C, [self.t0]])
        if not np.all(np.isfinite(vals)):
            raise ValueError("closed-form parameters must be finite")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "t0", float(self.t0))

    @classmethod
    def periodic(cls, betas, C, t0=0.0):
        return cls(np.zeros(len(np.atleast_1d(betas))), betas, C, t0)

    @property
    def K(self):
        return len(self.betas)

    @property
    def n_params(self):
        return 3 * self.K + 1

    def __call__(self, t):
        return evaluate(self, t)

    def to_dict(self):
        return {
            "K": self.K,
            "alphas": self.alphas.tolist(),
            "betas": self.betas.tolist(),
            "C": self.C.tolist(),
            "t0": self.t0,
        }

    @classmethod
    def from_dict(cls, doc):
        model = cls(doc["alphas"], doc["betas"], doc["C"], doc.get("t0", 0.0))
        if "K" in doc and doc["K"] != model.K:
            raise ValueError(f"K={doc['K']} does not match {model.K} modes")
        return model

    def save(self, path, encoder_checkpoint=None):
        doc = self.to_dict()
        if encoder_checkpoint is not None:
            doc["encoder_checkpoint"] = str(encoder_checkpoint)
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_exponent(alphas, s):
    if np.any(alphas != 0):
        worst = np.max(np.abs(np.multiply.outer(s, alphas))) if np.size(s) else 0.0
        if worst > MAX_EXPONENT:
            raise ClosedFormOverflow(f"alpha * t reaches {worst:.1f} (limit {MAX_EXPONENT})")


def basis(alphas, betas, s):
    """Columns ``e^{a s}(cos b s - sin b s)``, ``e^{a s}(cos b s + sin b s)`` per mode."""
    s = np.asarray(s, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    _check_exponent(alphas, s)
    bs = np.multiply.outer(s, betas)
    env = np.exp(np.multiply.outer(s, alphas))
    c, sn = np.cos(bs), np.sin(bs)
    out = np.empty(s.shape + (2 * len(betas),))
    out[..., 0::2] = env * (c - sn)
    out[..., 1::2] = env * (c + sn)
    return out


def _basis_dt(alphas, betas, s):
    """Derivative of :func:`basis` with respect to ``s``."""
    s = np.asarray(s, dtype=float)
    bs = np.multiply.outer(s, betas)
    env = np.exp(np.multiply.outer(s, alphas))
    c, sn = np.cos(bs), np.sin(bs)
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)
    out = np.empty(s.shape + (2 * len(betas),))
    out[..., 0::2] = env * (a * (c - sn) - b * (sn + c))
    out[..., 1::2] = env * (a * (c + sn) + b * (c - sn))
    return out


def evaluate(model: ClosedFormModel, t) -> np.ndarray:
    """The closed-form solution at times ``t`` (shifted by ``model.t0``)."""
    s = np.asarray(t, dtype=float) - model.t0
    return basis(model.alphas, model.betas, s) @ model.C


def derivatives(model: ClosedFormModel, t, order: int) -> np.ndarray:
    """``d^j X / dt^j`` at ``t`` for ``j = 0..order``, shape ``(order + 1,) + t.shape``.

    Uses ``d/ds e^{(a + ib) s} = (a + ib) e^{(a + ib) s}``: each mode's pair of
    columns is the real and imaginary part of one complex exponential.
    """
    s = np.asarray(t, dtype=float) - model.t0
    _check_exponent(model.alphas, s)
    lam = model.alphas + 1j * model.betas
    # cos - sin = Re[(1 + i) e^{ib s}],  cos + sin = Re[(1 - i) e^{ib s}]
    C = model.C.reshape(-1, 2)
    w = C[:, 0] * (1 + 1j) + C[:, 1] * (1 - 1j)
    E = np.exp(np.multiply.outer(s, lam))
    return np.stack([np.real((E * lam**j) @ w) for j in range(order + 1)])


def companion_system(model: ClosedFormModel) -> LinearOdeSystem:
    """Order-``2K`` scalar linear ODE whose solution through ``t=0`` is ``model``.

    The characteristic polynomial has roots ``alpha_k +- i beta_k``; the state is
    ``(X, X', ..., X^{(2K-1)})`` so its first component reproduces
    :func:`evaluate`.
    """
    roots = np.concatenate([model.alphas + 1j * model.betas, model.alphas - 1j * model.betas])
    poly = np.real(np.poly(roots))  # highest degree first, leading 1
    coeffs = poly[1:][::-1]
    A = companion_from_char_poly(coeffs)
    x0 = derivatives(model, 0.0, 2 * model.K - 1)
    return LinearOdeSystem(A, x0)


# -- frequencies --------------------------------------------------------------


def periodogram(values, dt):
    """Angular frequencies and power ``|DFT|^2 / N`` of the de-meaned series."""
    x = np.asarray(values, dtype=float)
    x = x - x.mean()
    N = len(x)
    spec = np.fft.rfft(x)
    power = (spec.real**2 + spec.imag**2) / N
    omega = 2.0 * np.pi * np.fft.rfftfreq(N, d=dt)
    return omega, power


@dataclass(frozen=True)
class FrequencyEstimate:
    betas: np.ndarray
    power: np.ndarray
    low_confidence: bool


def estimate_frequencies(values, dt, K, *, refine=False) -> FrequencyEstimate:
    """The ``K`` strongest periodogram peaks (zero bin excluded), ascending.

    A peak is a local maximum of the power spectrum above ``1e-10`` times the
    largest bin. With ``refine=True`` each peak is moved off its bin by a
    parabola through the neighbouring magnitudes. The estimate is flagged
    ``low_confidence`` when the strongest peak is under three times the
    median bin power.

    Raises
    ------
    FrequencyEstimationError
        When fewer than ``K`` peaks clear the noise floor.
    """
    values = np.asarray(values, dtype=float)
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(values) < 4 * K:
        raise ValueError(f"need at least {4 * K} samples for {K} frequencies, got {len(values)}")
    omega, power = periodogram(values, dt)
    p = power[1:]
    top = p.max() if p.size else 0.0
    left = np.concatenate([[-np.inf], p[:-1]])
    right = np.concatenate([p[1:], [-np.inf]])
    peaks = np.flatnonzero((p >= left) & (p > right) & (p > 1e-10 * top) & (top > 0))
    if len(peaks) < K:
        raise FrequencyEstimationError(len(peaks), K)
    chosen = peaks[np.argsort(-p[peaks], kind="stable")[:K]] + 1
    step = omega[1] - omega[0]
    betas = omega[chosen].astype(float)
    if refine:
        mag = np.sqrt(power)
        for i, j in enumerate(chosen):
            if 1 <= j < len(mag) - 1:
                a, b, c = mag[j - 1], mag[j], mag[j + 1]
                denom = a - 2 * b + c
                if denom < 0:
                    betas[i] = omega[j] + step * float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
    order = np.argsort(betas)
    low = bool(p.max() < 3.0 * np.median(p))
    return FrequencyEstimate(_frozen(betas[order]), _frozen(power[chosen][order]), low)


# -- stage 1: fit one sample --------------------------------------------------


@dataclass
class ClosedFormFit:
    model: ClosedFormModel
    rmse: float
    nfev: int
    restarts: int
    converged: bool


def _lstsq_C(alphas, betas, t0, t, y):
    B = basis(alphas, betas, t - t0)
    C, *_ = np.linalg.lstsq(B, y, rcond=None)
    return C


def fit_closed_form(
    sample,
    K: int = 2,
    *,
    dt: float = 1.0,
    seed: int = 0,
    restarts: int = 3,
    free_alphas: bool = False,
    rmse_threshold: float | None = None,
    target_rmse: float | None = None,
    xatol: float = 1e-6,
    fatol: float = 1e-9,
    max_fev: int | None = None,
) -> ClosedFormFit:
    """Derivative-free fit of frequencies, amplitudes and time shift to one sample.

    The sample sits on ``t = i * dt``. Frequencies start at the refined
    periodogram peaks, amplitudes at their least-squares values, ``t0`` at 0.
    Nelder-Mead then minimizes the RMSE over ``(betas, C, t0)`` (plus
    ``alphas`` with ``free_alphas``), with ``t0`` confined to one period of the
    slowest mode. A final least-squares solve for ``C`` at the optimum is
    exact because the model is linear in ``C``. With ``target_rmse`` the
    search stops as soon as the RMSE reaches that value.

    Raises
    ------
    tsode.optim.Stagnation
        If ``rmse_threshold`` is set and the simplex collapses above it.
    """
    y = np.asarray(sample, dtype=float)
    if len(y) < 4 * K + 2:
        raise ValueError(f"sample of length {len(y)} is too short for K={K} (need {4 * K + 2})")
    t = dt * np.arange(len(y))
    est = estimate_frequencies(y, dt, K, refine=True)
    betas0 = np.maximum(est.betas, 1e-6)
    alphas0 = np.zeros(K)
    C0 = _lstsq_C(alphas0, betas0, 0.0, t, y)
    period = 2.0 * np.pi / betas0.min()

    def unpack(theta):
        betas = theta[:K]
        C = theta[K : 3 * K]
        t0 = theta[3 * K]
        alphas = theta[3 * K + 1 :] if free_alphas else alphas0
        return alphas, betas, C, t0

    def rmse(theta):
        alphas, betas, C, t0 = unpack(theta)
        try:
            pred = basis(alphas, betas, t - t0) @ C
        except ClosedFormOverflow:
            return np.inf
        return math.sqrt(float(np.mean((pred - y) ** 2)))

    theta0 = np.concatenate([betas0, C0, [0.0], alphas0 if free_alphas else []])
    cscale = max(float(np.max(np.abs(C0))), 1e-3)
    step = np.concatenate(
        [
            np.maximum(0.02 * betas0, 1e-3),
            np.full(2 * K, 0.05 * cscale),
            [0.01 * period],
            np.full(K, 1e-3) if free_alphas else [],
        ]
    )
    lower = np.concatenate([np.zeros(K), np.full(2 * K, -np.inf), [0.0], np.full(K, -np.inf) if free_alphas else []])
    upper = np.concatenate([np.full(3 * K, np.inf), [period], np.full(K, np.inf) if free_alphas else []])
    res = minimize_with_restarts(
        rmse,
        theta0,
        restarts=restarts,
        seed=seed,
        step=step,
        lower=lower,
        upper=upper,
        xatol=xatol,
        fatol=fatol,
        max_fev=max_fev,
        stagnation_threshold=rmse_threshold,
        target=target_rmse,
    )
    alphas, betas, C, t0 = unpack(res.x)
    C_ls = _lstsq_C(alphas, betas, t0, t, y)
    theta_ls = np.concatenate([betas, C_ls, [t0], alphas if free_alphas else []])
    final = rmse(theta_ls)
    nfev = res.nfev + 1
    if final <= res.fun:
        C = C_ls
    else:
        final = res.fun
    model = ClosedFormModel(alphas.copy(), betas.copy(), C.copy(), t0)
    return ClosedFormFit(model, final, nfev, res.restarts, res.converged)


# -- stage 2: encoder ---------------------------------------------------------


class EncoderModel:
    """Mlp from a history window to per-window amplitudes and time shift.

    Time is measured from the first history sample, so the forecast grid is
    ``(m + j) * dt`` for ``j = 0..n-1``. Implements the ``forward`` /
    ``backward`` / ``parameters`` protocol of :func:`tsode.nn.train` with the
    closed-form evaluation as a fixed, differentiable output layer.
    """

    def __init__(self, net: Mlp, alphas, betas, dt: float = 1.0, horizon: int = 1):
        K = len(betas)
        if net.n_out != 2 * K + 1:
            raise ValueError(f"encoder must output {2 * K + 1} values, got {net.n_out}")
        self.net = net
        self.alphas = np.asarray(alphas, dtype=float)
        self.betas = np.asarray(betas, dtype=float)
        self.dt = float(dt)
        self.horizon = int(horizon)

    @property
    def m(self):
        return self.net.n_in

    @property
    def K(self):
        return len(self.betas)

    def parameters(self):
        return self.net.parameters()

    def coefficients(self, H):
        out = self.net(np.atleast_2d(np.asarray(H, dtype=float)))
        return out[:, : 2 * self.K], out[:, 2 * self.K]

    def _grid(self, n):
        return self.dt * (self.m + np.arange(n))

    def predict(self, H, n):
        C, t0 = self.coefficients(H)
        s = self._grid(n)[None, :] - t0[:, None]
        return np.einsum("bjc,bc->bj", basis(self.alphas, self.betas, s), C)

    def forward(self, H, n=None):
        n = self.horizon if n is None else n
        out, caches = self.net.forward(np.asarray(H, dtype=float))
        C, t0 = out[:, : 2 * self.K], out[:, 2 * self.K]
        s = self._grid(n)[None, :] - t0[:, None]
        B = basis(self.alphas, self.betas, s)
        pred = np.einsum("bjc,bc->bj", B, C)
        return pred, (caches, B, s, C)

    def backward(self, cache, dpred):
        caches, B, s, C = cache
        dC = np.einsum("bj,bjc->bc", dpred, B)
        dB = _basis_dt(self.alphas, self.betas, s)
        dt0 = -np.einsum("bj,bjc,bc->b", dpred, dB, C)
        return self.net.backward(caches, np.column_stack([dC, dt0]))

    def architecture(self):
        return {
            **self.net.architecture(),
            "alphas": self.alphas.tolist(),
            "betas": self.betas.tolist(),
            "dt": self.dt,
            "horizon": self.horizon,
        }


@dataclass
class EncoderFit:
    encoder: EncoderModel
    history: TrainResult = field(default=None)
    steps: int = 0


def train_encoder(
    histories,
    targets,
    frozen: ClosedFormModel,
    *,
    dt: float = 1.0,
    hidden=(64,),
    epochs: int = 100,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> EncoderFit:
    """Train the window-to-(C, t0) network with ``frozen`` alphas and betas.

    The output layer starts at zero weights with its bias set to the stage-1
    amplitudes and shift, so an untrained encoder reproduces the stage-1 fit
    for every window.
    """
    H = np.asarray(histories, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if H.ndim != 2 or Y.ndim != 2 or len(H) != len(Y) or len(H) == 0:
        raise ValueError("need matching non-empty 2-D history and target arrays")
    m = H.shape[1]
    K = frozen.K
    rng = np.random.default_rng(seed)
    sizes = [m, *hidden, 2 * K + 1]
    net = Mlp(sizes, ["relu"] * len(hidden) + ["identity"], rng)
    net.layers[-1].W[...] = 0.0
    net.layers[-1].b[...] = np.concatenate([frozen.C, [frozen.t0]])
    enc = EncoderModel(net, frozen.alphas, frozen.betas, dt, horizon=Y.shape[1])
    result = train(enc, H, Y, epochs=epochs, batch_size=batch_size, optimizer=Adam(lr), seed=seed)
    steps = epochs * math.ceil(len(H) / batch_size)
    return EncoderFit(enc, result, steps)


def forecast(encoder: EncoderModel, history, n: int) -> np.ndarray:
    """Next ``n`` values after one history window (or a batch of windows)."""
    H = np.asarray(history, dtype=float)
    single = H.ndim == 1
    if H.shape[-1] != encoder.m:
        raise ValueError(f"encoder expects histories of length {encoder.m}, got {H.shape[-1]}")
    if n == 0:
        return np.zeros(0) if single else np.zeros((len(H), 0))
    out = encoder.predict(np.atleast_2d(H), n)
    return out[0] if single else out


class ClosedFormForecaster:
    """Two-stage closed-form forecaster behind the common ``fit`` / ``predict`` protocol.

    Stage 1 fits one sample of length ``m + n`` drawn at a seeded position in
    the training series; stage 2 trains the encoder on every training window.
    The grid is measured in sample steps unless ``dt`` is given. When the
    sample shows fewer than ``K`` spectral peaks, the model uses as many modes
    as there are peaks.
    """

    name = "closed_form"

    def __init__(self, K=2, dt=1.0, hidden=(64,), epochs=100, batch_size=32, lr=1e-3,
                 restarts=3, stride=1):
        self.K, self.dt, self.hidden = K, dt, hidden
        self.epochs, self.batch_size, self.lr = epochs, batch_size, lr
        self.restarts, self.stride = restarts, stride

    def fit(self, train_series, m, n, seed=0):
        values = np.asarray(getattr(train_series, "values", train_series), dtype=float)
        if len(values) < m + n:
            raise ValueError(f"training series of length {len(values)} is shorter than m + n = {m + n}")
        rng = np.random.default_rng(seed)
        start = int(rng.integers(0, len(values) - (m + n) + 1))
        sample = values[start : start + m + n]
        try:
            self.stage1 = fit_closed_form(sample, self.K, dt=self.dt, seed=seed, restarts=self.restarts)
        except FrequencyEstimationError as exc:
            # fewer resolvable tones than requested: fit the ones that are there
            if exc.found < 1:
                raise
            self.stage1 = fit_closed_form(sample, exc.found, dt=self.dt, seed=seed, restarts=self.restarts)
        H, Y = window_arrays(values, m, n, self.stride)
        self.stage2 = train_encoder(H, Y, self.stage1.model, dt=self.dt, hidden=self.hidden,
                                    epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=seed)
        self.encoder = self.stage2.encoder
        self.n = n
        return self

    def predict(self, history):
        return forecast(self.encoder, history, self.n)
