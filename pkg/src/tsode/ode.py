"""Fixed-step RK4 integration and exact gradients of the discretized solve.

Gradients are taken by reverse mode through the unrolled RK4 stages
(discretize-then-optimize), so they are the exact derivatives of the computed
trajectory rather than of the continuous flow.

States may be a single vector ``(d,)`` or a batch ``(B, d)``; the same vector
field is applied row-wise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp

__all__ = [
    "LinearField",
    "MlpField",
    "Trajectory",
    "SolverBlowUp",
    "BLOW_UP_NORM",
    "rk4_step",
    "integrate",
    "grad_through_solver",
]

BLOW_UP_NORM = 1e12


class SolverBlowUp(FloatingPointError):
    def __init__(self, t, norm):
        super().__init__(f"solution blew up at t={t:.6g} (state norm {norm:.3g})")
        self.t = t
        self.norm = norm


class LinearField:
    """``x' = A x``."""

    def __init__(self, A):
        A = np.array(A, dtype=float, ndmin=2)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"system matrix must be square, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("system matrix has non-finite entries")
        self.A = A

    @property
    def dim(self):
        return self.A.shape[0]

    def parameters(self):
        return [self.A]

    def __call__(self, x, t=0.0):
        return x @ self.A.T

    def vjp(self, x, v):
        """``(v^T df/dA, v^T df/dx)`` at state ``x``."""
        dA = np.outer(v, x) if x.ndim == 1 else v.T @ x
        return [dA], v @ self.A


class MlpField:
    """``x' = net(x)`` for an Mlp with equal input and output width."""

    def __init__(self, net: Mlp):
        if net.n_in != net.n_out:
            raise ValueError(f"vector field net must map R^d to R^d, got {net.n_in}->{net.n_out}")
        self.net = net

    @property
    def dim(self):
        return self.net.n_in

    def parameters(self):
        return self.net.parameters()

    def __call__(self, x, t=0.0):
        return self.net.forward(x)[0]

    def vjp(self, x, v):
        _, caches = self.net.forward(x)
        return self.net.backward(caches, v)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("trajectory times and states differ in length")


def rk4_step(f, x, t, h):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SolverBlowUp(t + h, np.inf)
    return out


def _check_grid(t_grid):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 1:
        raise ValueError("time grid must be a non-empty 1-D sequence")
    if len(t_grid) > 1:
        steps = np.diff(t_grid)
        dt = steps[0]
        if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-9 * max(dt, abs(t_grid[-1])):
            raise ValueError("time grid must be strictly increasing and uniform")
    return t_grid


def _grid_step(t_grid):
    return (t_grid[-1] - t_grid[0]) / (len(t_grid) - 1) if len(t_grid) > 1 else 0.0


def _solve(f, x0, t_grid, substeps, tape):
    t_grid = _check_grid(t_grid)
    x = np.array(x0, dtype=float)
    states = np.empty((len(t_grid),) + x.shape)
    states[0] = x
    stages = [] if tape else None
    h = _grid_step(t_grid) / substeps
    for j in range(1, len(t_grid)):
        t = t_grid[j - 1]
        for s in range(substeps):
            ts = t + s * h
            k1 = f(x, ts)
            y2 = x + 0.5 * h * k1
            k2 = f(y2, ts + 0.5 * h)
            y3 = x + 0.5 * h * k2
            k3 = f(y3, ts + 0.5 * h)
            y4 = x + h * k3
            k4 = f(y4, ts + h)
            if tape:
                stages.append((x, y2, y3, y4))
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            norm = np.max(np.abs(x))
            if not norm <= BLOW_UP_NORM:
                raise SolverBlowUp(ts + h, norm)
        states[j] = x
    return Trajectory(t_grid, states), stages


def integrate(f, x0, t_grid, substeps: int = 4, record: bool = False):
    """Integrate ``x' = f(x)`` from ``x0`` at ``t_grid[0]``, sampled on ``t_grid``.

    Each grid interval is split into ``substeps`` RK4 steps. With
    ``record=True`` the stage inputs are returned as well, for use by
    :func:`grad_through_solver`.

    Raises
    ------
    SolverBlowUp
        When any state component exceeds ``BLOW_UP_NORM`` in magnitude.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    traj, stages = _solve(f, x0, t_grid, substeps, record)
    return (traj, stages) if record else traj


def grad_through_solver(f, x0, t_grid, state_grads, substeps: int = 4, tape=None):
    """Gradients of a loss w.r.t. field parameters and ``x0``.

    ``state_grads`` holds ``dL/d states`` with the shape of the trajectory
    states. Returns ``(param_grads, dx0)``, ``param_grads`` aligned with
    ``f.parameters()``.
    """
    t_grid = _check_grid(t_grid)
    x0 = np.asarray(x0, dtype=float)
    state_grads = np.asarray(state_grads, dtype=float)
    if state_grads.shape != (len(t_grid),) + x0.shape:
        raise ValueError(f"state gradient shape {state_grads.shape} does not match trajectory")
    if tape is None:
        _, tape = _solve(f, x0, t_grid, substeps, True)
    h = _grid_step(t_grid) / substeps
    grads = [np.zeros_like(p) for p in f.parameters()]

    def acc(gs):
        for a, g in zip(grads, gs):
            a += g

    lam = state_grads[-1].copy()
    step = len(tape)
    for j in range(len(t_grid) - 1, 0, -1):
        for _ in range(substeps):
            step -= 1
            x, y2, y3, y4 = tape[step]
            a = h / 6.0
            dx = lam.copy()
            g4, d4 = f.vjp(y4, a * lam)
            acc(g4)
            dx += d4
            dk3 = 2.0 * a * lam + h * d4
            g3, d3 = f.vjp(y3, dk3)
            acc(g3)
            dx += d3
            dk2 = 2.0 * a * lam + 0.5 * h * d3
            g2, d2 = f.vjp(y2, dk2)
            acc(g2)
            dx += d2
            dk1 = a * lam + 0.5 * h * d2
            g1, d1 = f.vjp(x, dk1)
            acc(g1)
            lam = dx + d1
        lam = lam + state_grads[j - 1]
    return grads, lam
