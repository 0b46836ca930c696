"""Linear neural ODE ``x' = A x``: training, and reading the learned system.

A linear field needs no tape. One RK4 step of size ``h`` is the matrix
polynomial ``M = I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24`` and a grid step is
``P = M^s``, so the forward pass is ``T`` mat-vecs and the exact gradient of the
discretized trajectory follows by pulling the adjoint back through ``P``, then
``M``, then ``A``. The generic tape in :mod:`tsode.ode` computes the same
numbers and is used to check this path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, Sgd
from .ode import BLOW_UP_NORM, LinearField, SolverBlowUp, Trajectory, integrate

__all__ = [
    "LinearOdeSystem",
    "LinearNodeFit",
    "LinearNodeDiverged",
    "rk4_propagator",
    "linear_trajectory",
    "linear_loss_and_grad",
    "train_linear_node",
    "particular_solution_x1",
    "particular_solution_state0",
    "TWO_TONE_COEFFS",
]


@dataclass(frozen=True)
class LinearOdeSystem:
    A: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        x0 = np.array(self.x0, dtype=float, ndmin=1)
        if A.shape != (len(x0), len(x0)):
            raise ValueError(f"matrix {A.shape} does not match state dimension {len(x0)}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(x0))):
            raise ValueError("system entries must be finite")
        A.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self):
        return len(self.x0)

    def trajectory(self, t_grid, substeps=4) -> Trajectory:
        return integrate(LinearField(self.A), self.x0, t_grid, substeps)


class LinearNodeDiverged(FloatingPointError):
    def __init__(self, iteration, reason):
        super().__init__(f"linear ODE training diverged at iteration {iteration}: {reason}")
        self.iteration = iteration


def _step_matrix(A, h):
    d = A.shape[0]
    hA = h * A
    I = np.eye(d)
    return I + hA @ (I + hA @ (I + hA @ (I + hA / 4.0) / 3.0) / 2.0)


def _powers(M, k):
    out = [np.eye(M.shape[0])]
    for _ in range(k):
        out.append(out[-1] @ M)
    return out


def rk4_propagator(A, h, substeps=4):
    """Grid-step map ``P`` with ``x(t + substeps*h) = P x(t)`` under RK4."""
    return np.linalg.matrix_power(_step_matrix(np.asarray(A, dtype=float), h), substeps)


def linear_trajectory(A, x0, n_points, dt, substeps=4):
    P = rk4_propagator(A, dt / substeps, substeps)
    X = np.empty((n_points, len(x0)))
    X[0] = x0
    for j in range(1, n_points):
        X[j] = P @ X[j - 1]
        if not np.max(np.abs(X[j])) <= BLOW_UP_NORM:
            raise SolverBlowUp(j * dt, np.max(np.abs(X[j])))
    return X


def _pullback_power(M, G, s):
    """Gradient w.r.t. ``M`` of ``<G, M^s>``."""
    Mt = _powers(M.T, s - 1)
    return sum(Mt[r] @ G @ Mt[s - 1 - r] for r in range(s))


def _pullback_step_matrix(A, h, G):
    """Gradient w.r.t. ``A`` of ``<G, M(hA)>``."""
    At = _powers(A.T, 3)
    out = np.zeros_like(A)
    for k, coef in ((1, h), (2, h**2 / 2), (3, h**3 / 6), (4, h**4 / 24)):
        for r in range(k):
            out += coef * (At[r] @ G @ At[k - 1 - r])
    return out


def linear_loss_and_grad(A, x0, targets, dt, readout=None, substeps=4, l1_penalty=0.0):
    """Mean squared trajectory error and its exact gradients.

    ``targets`` is ``(T, p)``; the model output is ``X @ readout.T`` (the state
    itself when ``readout`` is None). Returns ``(loss, dA, dreadout)``.
    """
    A = np.asarray(A, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    T = len(targets)
    h = dt / substeps
    M = _step_matrix(A, h)
    P = np.linalg.matrix_power(M, substeps)
    X = np.empty((T, len(x0)))
    X[0] = x0
    for j in range(1, T):
        X[j] = P @ X[j - 1]
    if not np.max(np.abs(X)) <= BLOW_UP_NORM:
        raise SolverBlowUp(float(np.argmax(np.max(np.abs(X), axis=1) > BLOW_UP_NORM)) * dt, np.inf)
    Y = X if readout is None else X @ readout.T
    resid = Y - targets
    loss = float(np.mean(resid * resid))
    dY = 2.0 * resid / resid.size
    dR = None if readout is None else dY.T @ X
    G = dY if readout is None else dY @ readout
    lam = np.empty_like(X)
    lam[-1] = G[-1]
    for j in range(T - 2, -1, -1):
        lam[j] = G[j] + P.T @ lam[j + 1]
    dP = lam[1:].T @ X[:-1]
    dA = _pullback_step_matrix(A, h, _pullback_power(M, dP, substeps))
    if l1_penalty:
        loss += l1_penalty * float(np.sum(np.abs(A)))
        dA = dA + l1_penalty * np.sign(A)
    return loss, dA, dR


@dataclass
class LinearNodeFit:
    system: LinearOdeSystem
    loss_history: list = field(default_factory=list)
    readout: np.ndarray | None = None
    iterations: int = 0
    seed: int = 0

    @property
    def loss(self):
        return self.loss_history[-1] if self.loss_history else math.nan


def train_linear_node(
    samples: Trajectory,
    d: int,
    x0,
    *,
    lr: float = 0.02,
    max_iters: int = 1000,
    l1_penalty: float = 0.0,
    seed: int = 0,
    optimizer: str = "adam",
    loss_tol: float = 0.0,
    substeps: int = 4,
    init_scale: float = 0.1,
    fit_readout: bool | None = None,
    ramp: float = 0.3,
    start_points: int = 10,
) -> LinearNodeFit:
    """Learn ``A`` so that integrating ``x' = A x`` from fixed ``x0`` matches ``samples``.

    ``A`` starts i.i.d. uniform in ``[-init_scale, init_scale]`` drawn from
    ``seed``. When the samples have fewer channels than ``d`` (a scalar series
    fitted by a larger system) a linear readout ``y = r . x`` is learned
    alongside ``A``.

    The fitted horizon grows linearly from ``start_points`` samples to the full
    trajectory over the first ``ramp`` fraction of ``max_iters``; fitting the
    whole horizon from a near-zero ``A`` tends to settle on a decaying
    solution. Training stops after ``max_iters`` iterations or once the
    full-horizon loss falls below ``loss_tol``.
    """
    times = np.asarray(samples.times, dtype=float)
    targets = np.asarray(samples.states, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},), got {x0.shape}")
    p = targets.shape[1]
    if fit_readout is None:
        fit_readout = p != d
    if not fit_readout and p != d:
        raise ValueError(f"samples have {p} channels but the system has dimension {d}")
    dt = (times[-1] - times[0]) / (len(times) - 1)

    rng = np.random.default_rng(seed)
    A = rng.uniform(-init_scale, init_scale, size=(d, d))
    R = None
    params = [A]
    if fit_readout:
        R = rng.uniform(-1.0, 1.0, size=(p, d)) / math.sqrt(d)
        params.append(R)
    opt = Adam(lr) if optimizer == "adam" else Sgd(lr)

    T = len(targets)
    ramp_iters = max(1, int(ramp * max_iters))
    start_points = min(max(start_points, 2), T)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        span = min(T, start_points + (T - start_points) * (it - 1) // ramp_iters)
        try:
            loss, dA, dR = linear_loss_and_grad(A, x0, targets[:span], dt, R, substeps, l1_penalty)
        except SolverBlowUp as exc:
            raise LinearNodeDiverged(it, str(exc)) from exc
        if not math.isfinite(loss):
            raise LinearNodeDiverged(it, "non-finite loss")
        history.append(loss)
        if span == T and loss < loss_tol:
            break
        opt.step(params, [dA] if R is None else [dA, dR])
    else:
        if max_iters > 0:
            history.append(linear_loss_and_grad(A, x0, targets, dt, R, substeps, l1_penalty)[0])
    return LinearNodeFit(LinearOdeSystem(A.copy(), x0), history, None if R is None else R.copy(), it, seed)


# Characteristic polynomial lam^4 + 5 lam^2 + 4 = (lam^2 + 1)(lam^2 + 4).
TWO_TONE_COEFFS = (4.0, 0.0, 5.0, 0.0)


def particular_solution_x1(c, t):
    """First component of the order-4 companion system with spectrum {+-i, +-2i}.

    ``x1(t) = c2 sin 2t + c4 sin t + c1 cos 2t + c3 cos t``. The remaining
    components are its derivatives, which is why a forecaster observing only
    ``x1`` has to estimate derivatives of the data to set initial conditions.
    """
    c1, c2, c3, c4 = (float(v) for v in c)
    t = np.asarray(t, dtype=float)
    return c2 * np.sin(2 * t) + c4 * np.sin(t) + c1 * np.cos(2 * t) + c3 * np.cos(t)


def particular_solution_state0(c):
    """Initial state ``(x1, x1', x1'', x1''')`` at ``t=0`` for :func:`particular_solution_x1`."""
    c1, c2, c3, c4 = (float(v) for v in c)
    return np.array([c1 + c3, 2 * c2 + c4, -4 * c1 - c3, -8 * c2 - c4])
