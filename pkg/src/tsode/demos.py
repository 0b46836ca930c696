"""Small reproducible experiments on linear systems, each returning a JSON-able report."""

from __future__ import annotations

import numpy as np

from .closed_form import fit_closed_form
from .linear_node import (
    LinearNodeDiverged,
    TWO_TONE_COEFFS,
    train_linear_node,
)
from .ode import Trajectory
from .series import synth
from .spectrum import companion_from_char_poly, eigenvalues, solution_form_report

__all__ = ["DEMOS", "DemoFailed", "run_demo", "sine_recovery", "two_tone_spectrum", "companion", "closed_form_speed"]

ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])


class DemoFailed(RuntimeError):
    def __init__(self, name, seed, reason):
        super().__init__(f"demo {name!r} failed with seed {seed}: {reason}")
        self.seed = seed


def _two_tone():
    return synth("two_tone", 100, 0.0, 4 * np.pi)


def sine_recovery(seed: int = 0, max_iters: int = 1000) -> dict:
    """Learn a 2x2 system from 100 samples of ``[sin t, cos t]`` on ``[0, 2*pi)``."""
    ts = synth("sine_pair", 100, 0.0, 2 * np.pi)
    try:
        fit = train_linear_node(Trajectory(ts.times, ts.values), 2, ts.values[0], seed=seed, max_iters=max_iters)
    except LinearNodeDiverged as exc:
        raise DemoFailed("sine_recovery", seed, exc) from exc
    A = fit.system.A
    dev = A - ROTATION
    return {
        "demo": "sine_recovery",
        "seed": seed,
        "iterations": fit.iterations,
        "loss": fit.loss,
        "matrix": A.tolist(),
        "deviation": dev.tolist(),
        "max_deviation": float(np.max(np.abs(dev))),
    }


def two_tone_spectrum(seed: int = 0, max_iters: int = 1000) -> dict:
    """Learn a 4x4 system with a linear readout from ``4 sin t - 5 sin 2t``."""
    ts = _two_tone()
    try:
        fit = train_linear_node(Trajectory(ts.times, ts.values), 4, np.ones(4), lr=0.03, seed=seed, max_iters=max_iters)
    except LinearNodeDiverged as exc:
        raise DemoFailed("two_tone_spectrum", seed, exc) from exc
    A = fit.system.A
    spec = eigenvalues(A)
    form = solution_form_report(A, decimals=1)
    target = np.array([-2j, -1j, 1j, 2j])
    err = max(float(np.min(np.abs(spec.values - z))) for z in target)
    return {
        "demo": "two_tone_spectrum",
        "seed": seed,
        "iterations": fit.iterations,
        "loss": fit.loss,
        "matrix": A.tolist(),
        "readout": fit.readout.tolist(),
        "eigenvalues": spec.to_json(),
        "eigenvalue_error": err,
        "solution_form": form.rendering,
    }


def companion(seed: int = 0) -> dict:
    """Companion matrix of ``lam^4 + 5 lam^2 + 4`` and its spectrum."""
    A = companion_from_char_poly(TWO_TONE_COEFFS)
    spec = eigenvalues(A)
    return {
        "demo": "companion",
        "char_poly": [1.0, *reversed(TWO_TONE_COEFFS)],
        "matrix": A.tolist(),
        "eigenvalues": spec.to_json(),
        "solution_form": solution_form_report(A).rendering,
    }


def closed_form_speed(seed: int = 0, target_rmse: float = 0.05, max_iters: int = 3000) -> dict:
    """Cost to reach the same RMSE on two_tone: closed-form evaluations vs linear-node iterations."""
    ts = _two_tone()
    cf = fit_closed_form(ts.values, 2, dt=ts.dt, seed=seed, target_rmse=target_rmse)
    try:
        node = train_linear_node(
            Trajectory(ts.times, ts.values), 4, np.ones(4), lr=0.03, seed=seed,
            max_iters=max_iters, loss_tol=target_rmse**2,
        )
    except LinearNodeDiverged as exc:
        raise DemoFailed("closed_form_speed", seed, exc) from exc
    node_rmse = float(np.sqrt(node.loss))
    return {
        "demo": "closed_form_speed",
        "seed": seed,
        "target_rmse": target_rmse,
        "closed_form_evaluations": cf.nfev,
        "closed_form_rmse": cf.rmse,
        "closed_form_betas": cf.model.betas.tolist(),
        "linear_node_iterations": node.iterations,
        "linear_node_rmse": node_rmse,
        "linear_node_reached_target": node_rmse <= target_rmse,
        "ratio": node.iterations / cf.nfev,
    }


DEMOS = {
    "sine_recovery": sine_recovery,
    "two_tone_spectrum": two_tone_spectrum,
    "companion": companion,
    "closed_form_speed": closed_form_speed,
}


def run_demo(name: str, seed: int = 0) -> dict:
    if name not in DEMOS:
        raise ValueError(f"unknown demo {name!r}; choose from {sorted(DEMOS)}")
    return DEMOS[name](seed=seed)
