"""Nelder-Mead simplex minimization with seeded restarts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["OptimizeResult", "Stagnation", "nelder_mead", "minimize_with_restarts"]


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    converged: bool
    restarts: int = 0
    diameter: float = np.inf


class Stagnation(RuntimeError):
    def __init__(self, fun, restarts, diameter):
        super().__init__(
            f"simplex collapsed (diameter {diameter:.2e}) at objective {fun:.3e} after {restarts} restarts"
        )
        self.fun = fun
        self.restarts = restarts


def _initial_simplex(x0, step):
    n = len(x0)
    if step is None:
        step = np.where(x0 != 0.0, 0.05 * np.abs(x0), 0.00025)
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    sim = np.tile(x0, (n + 1, 1))
    sim[1:] += np.diag(step)
    return sim


def nelder_mead(
    func,
    x0,
    *,
    step=None,
    simplex=None,
    xatol=1e-8,
    fatol=1e-10,
    max_fev=None,
    lower=None,
    upper=None,
    ftarget=None,
) -> OptimizeResult:
    """Minimize ``func`` from ``x0``.

    Uses dimension-adaptive coefficients (reflection 1, expansion ``1 + 2/n``,
    contraction ``0.75 - 1/(2n)``, shrink ``1 - 1/n``), which hold up better
    than the classic ones beyond a handful of dimensions. Trial points are
    clipped into ``[lower, upper]`` when bounds are given. Stops when both the
    simplex spread in ``x`` (max-norm) and in ``f`` drop below the tolerances,
    or as soon as the best value reaches ``ftarget``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = len(x0)
    max_fev = max_fev if max_fev is not None else 400 * n
    rho = 1.0
    chi = 1.0 + 2.0 / n if n > 1 else 2.0
    psi = 0.75 - 1.0 / (2.0 * n) if n > 1 else 0.5
    sigma = 1.0 - 1.0 / n if n > 1 else 0.5

    lo = None if lower is None else np.asarray(lower, dtype=float)
    hi = None if upper is None else np.asarray(upper, dtype=float)

    def project(x):
        if lo is not None:
            x = np.maximum(x, lo)
        if hi is not None:
            x = np.minimum(x, hi)
        return x

    nfev = 0

    def f(x):
        nonlocal nfev
        nfev += 1
        val = float(func(x))
        return val if np.isfinite(val) else np.inf

    sim = np.array(simplex, dtype=float) if simplex is not None else _initial_simplex(x0, step)
    sim = np.array([project(v) for v in sim])
    fs = np.array([f(v) for v in sim])
    nit = 0
    converged = False
    while nfev < max_fev:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        diameter = np.max(np.abs(sim[1:] - sim[0]))
        if diameter <= xatol and np.max(np.abs(fs[1:] - fs[0])) <= fatol:
            converged = True
            break
        if ftarget is not None and fs[0] <= ftarget:
            converged = True
            break
        nit += 1
        centroid = sim[:-1].mean(axis=0)
        xr = project(centroid + rho * (centroid - sim[-1]))
        fr = f(xr)
        if fr < fs[0]:
            xe = project(centroid + chi * (xr - centroid))
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = project(centroid + psi * (xr - centroid))
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = project(centroid - psi * (centroid - sim[-1]))
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = project(sim[0] + sigma * (sim[i] - sim[0]))
            fs[i] = f(sim[i])
    order = np.argsort(fs, kind="stable")
    sim, fs = sim[order], fs[order]
    return OptimizeResult(
        sim[0].copy(), float(fs[0]), nfev, nit, converged, diameter=float(np.max(np.abs(sim[1:] - sim[0])))
    )


def minimize_with_restarts(
    func,
    x0,
    *,
    restarts=3,
    seed=0,
    step=None,
    target=None,
    stagnation_threshold=None,
    **kwargs,
) -> OptimizeResult:
    """Nelder-Mead, restarted from the incumbent with a freshly oriented simplex.

    Each restart builds its simplex along random orthogonal directions drawn
    from ``seed``, scaled by ``step``. The best point over all runs is kept.
    Restarts stop early once the objective reaches ``target``.

    Raises
    ------
    Stagnation
        If ``stagnation_threshold`` is given, the final simplex has collapsed
        below 1e-12 and the best objective is still above the threshold.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = len(x0)
    rng = np.random.default_rng(seed)
    base_step = _initial_simplex(x0, step)[1:] - x0
    scale = np.abs(np.diag(base_step))
    best = nelder_mead(func, x0, step=step, ftarget=target, **kwargs)
    total = best.nfev
    total_it = best.nit
    done = 0
    for _ in range(restarts):
        if target is not None and best.fun <= target:
            break
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        sim = np.vstack([best.x, best.x + Q.T * scale])
        res = nelder_mead(func, best.x, simplex=sim, ftarget=target, **kwargs)
        total += res.nfev
        total_it += res.nit
        done += 1
        if res.fun <= best.fun:
            best = res
    best.nfev = total
    best.nit = total_it
    best.restarts = done
    if stagnation_threshold is not None and best.fun > stagnation_threshold and best.diameter < 1e-12:
        raise Stagnation(best.fun, done, best.diameter)
    return best
