"""Eigenvalues of small real matrices and what they say about linear ODE solutions.

The eigensolver is the classical dense pipeline: diagonal balancing,
Householder reduction to upper Hessenberg form, then Francis implicit
double-shift QR sweeps in real arithmetic. Complex eigenvalues are read off
2x2 diagonal blocks, so they come out as exact conjugate pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Spectrum",
    "Mode",
    "SolutionForm",
    "EigenNonConvergence",
    "MAX_DIM",
    "balance",
    "hessenberg",
    "eigenvalues",
    "companion_from_char_poly",
    "solution_form_report",
    "spectrum_report",
    "load_matrix_csv",
]

MAX_DIM = 32


class EigenNonConvergence(ArithmeticError):
    def __init__(self, matrix, residual, sweeps):
        super().__init__(
            f"QR iteration did not converge after {sweeps} sweeps "
            f"(smallest undeflated subdiagonal {residual:.3e})\n{np.array2string(matrix, precision=4)}"
        )
        self.matrix = matrix
        self.residual = residual


def balance(A):
    """Diagonal similarity scaling by powers of two so row and column norms match."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    radix = 2.0
    sqrdx = radix * radix
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(A[:, i])) - abs(A[i, i])
            r = np.sum(np.abs(A[i, :])) - abs(A[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                A[i, :] /= f
                A[:, i] *= f
    return A


def hessenberg(A):
    """Upper Hessenberg matrix orthogonally similar to ``A`` (Householder)."""
    H = np.array(A, dtype=float)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
        H[k + 2 :, k] = 0.0
    return H


def _hqr(H, tol_abs, max_sweeps):
    """Eigenvalues of an upper Hessenberg matrix; ``H`` is overwritten."""
    a = H
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    eps = np.finfo(float).eps
    nn = n - 1
    shift = 0.0
    sweeps = 0
    its = 0
    while nn >= 0:
        # Look for a negligible subdiagonal element.
        l = nn
        while l >= 1:
            s = abs(a[l - 1, l - 1]) + abs(a[l, l])
            sub = abs(a[l, l - 1])
            if sub <= eps * s or sub <= tol_abs:
                a[l, l - 1] = 0.0
                break
            l -= 1
        x = a[nn, nn]
        if l == nn:
            wr[nn], wi[nn] = x + shift, 0.0
            nn -= 1
            its = 0
            continue
        y = a[nn - 1, nn - 1]
        w = a[nn, nn - 1] * a[nn - 1, nn]
        if l == nn - 1:
            p = 0.5 * (y - x)
            q = p * p + w
            z = math.sqrt(abs(q))
            x += shift
            if q >= 0.0:
                z = p + math.copysign(z, p)
                wr[nn - 1] = wr[nn] = x + z
                if z != 0.0:
                    wr[nn] = x - w / z
                wi[nn - 1] = wi[nn] = 0.0
            else:
                wr[nn - 1] = wr[nn] = x + p
                wi[nn - 1], wi[nn] = z, -z
            nn -= 2
            its = 0
            continue

        if sweeps >= max_sweeps:
            raise EigenNonConvergence(H, abs(a[nn, nn - 1]), sweeps)
        if its > 0 and its % 10 == 0:
            # Exceptional shift to break cycles.
            shift += x
            for i in range(nn + 1):
                a[i, i] -= x
            s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
            x = y = 0.75 * s
            w = -0.4375 * s * s
        its += 1
        sweeps += 1

        # Two consecutive small subdiagonals let the bulge start lower.
        m = nn - 2
        while True:
            z = a[m, m]
            r = x - z
            s = y - z
            p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
            q = a[m + 1, m + 1] - z - r - s
            r = a[m + 2, m + 1]
            s = abs(p) + abs(q) + abs(r)
            p, q, r = p / s, q / s, r / s
            if m == l:
                break
            u = abs(a[m, m - 1]) * (abs(q) + abs(r))
            v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
            if u <= eps * v:
                break
            m -= 1
        for i in range(m + 2, nn + 1):
            a[i, i - 2] = 0.0
            if i != m + 2:
                a[i, i - 3] = 0.0

        # Chase the bulge with 3x3 Householder reflections.
        for k in range(m, nn):
            if k != m:
                p = a[k, k - 1]
                q = a[k + 1, k - 1]
                r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                x = abs(p) + abs(q) + abs(r)
                if x != 0.0:
                    p, q, r = p / x, q / x, r / x
            s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
            if s == 0.0:
                continue
            if k == m:
                if l != m:
                    a[k, k - 1] = -a[k, k - 1]
            else:
                a[k, k - 1] = -s * x
            p += s
            x, y, z = p / s, q / s, r / s
            q /= p
            r /= p
            for j in range(k, nn + 1):
                p = a[k, j] + q * a[k + 1, j]
                if k != nn - 1:
                    p += r * a[k + 2, j]
                    a[k + 2, j] -= p * z
                a[k + 1, j] -= p * y
                a[k, j] -= p * x
            for i in range(l, min(nn, k + 3) + 1):
                p = x * a[i, k] + y * a[i, k + 1]
                if k != nn - 1:
                    p += z * a[i, k + 2]
                    a[i, k + 2] -= p * r
                a[i, k + 1] -= p * q
                a[i, k] -= p
    return wr + 1j * wi


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted by real part, then imaginary part."""

    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @property
    def trace(self):
        return float(np.sum(self.values).real)

    @property
    def det(self):
        return float(np.prod(self.values).real)

    def modes(self, tol=1e-8):
        """One ``(alpha, beta >= 0)`` per conjugate pair or real eigenvalue."""
        out = []
        for lam in self.values:
            if lam.imag < -tol:
                continue
            beta = lam.imag if lam.imag > tol else 0.0
            out.append(Mode(float(lam.real), float(beta)))
        return out

    def to_json(self):
        return [{"re": float(z.real), "im": float(z.imag)} for z in self.values]


def eigenvalues(A, max_sweeps=None) -> Spectrum:
    """All eigenvalues of a real square matrix of order at most :data:`MAX_DIM`.

    Raises
    ------
    EigenNonConvergence
        If the QR sweeps exceed ``100 * d`` (default) without deflating.
    """
    A = np.array(A, dtype=float, ndmin=2)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    d = A.shape[0]
    if d > MAX_DIM:
        raise ValueError(f"matrix order {d} exceeds the supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if d == 0:
        return Spectrum(np.zeros(0, dtype=complex))
    H = hessenberg(balance(A))
    tol_abs = 1e-12 * np.linalg.norm(A)
    lam = _hqr(H, tol_abs, max_sweeps if max_sweeps is not None else 100 * d)
    order = np.lexsort((lam.imag, lam.real))
    lam = lam[order]
    lam.setflags(write=False)
    return Spectrum(lam)


def companion_from_char_poly(coeffs):
    """Shift-row companion matrix of ``lam^d + a_{d-1} lam^{d-1} + ... + a_0``.

    ``coeffs`` is ``[a_0, ..., a_{d-1}]``. Row ``i`` maps ``x_i' = x_{i+1}``
    and the last row is ``[-a_0, ..., -a_{d-1}]``.
    """
    a = np.asarray(coeffs, dtype=float).ravel()
    if a.size < 1:
        raise ValueError("need at least one coefficient")
    if not np.all(np.isfinite(a)):
        raise ValueError("coefficients must be finite")
    d = a.size
    C = np.zeros((d, d))
    C[np.arange(d - 1), np.arange(1, d)] = 1.0
    C[-1] = 0.0 - a  # avoids -0.0 entries for zero coefficients
    return C


@dataclass(frozen=True)
class Mode:
    alpha: float
    beta: float


_SUBSCRIPTS = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")


def _num(v, decimals):
    r = round(v, decimals)
    if r == int(r):
        return str(int(r))
    return f"{r:g}"


def _render(modes, decimals):
    terms = []
    k = 1
    # Fastest oscillations first, as one reads off a spectrum.
    for mode in sorted(modes, key=lambda md: (-md.beta, -md.alpha)):
        decay = ""
        a = _num(mode.alpha, decimals)
        if a != "0":
            decay = "e^{t}" if a == "1" else "e^{−t}" if a == "-1" else f"e^{{{a.replace('-', '−')}t}}"
        c = lambda i: f"c{str(i).translate(_SUBSCRIPTS)}"
        if mode.beta == 0.0:
            terms.append(f"{c(k)}{decay}")
            k += 1
        else:
            b = _num(mode.beta, decimals)
            arg = "t" if b == "1" else f"{b}t"
            terms.append(f"{c(k)}{decay}cos {arg}")
            terms.append(f"{c(k + 1)}{decay}sin {arg}")
            k += 2
    if len(terms) == 1:
        return terms[0]
    return "f(" + ", ".join(terms) + ")"


@dataclass(frozen=True)
class SolutionForm:
    """Modes of ``x' = A x`` and the solution terms they generate."""

    modes: tuple
    rendering: str

    def __str__(self):
        return self.rendering


def solution_form_report(A, decimals: int = 2) -> SolutionForm:
    """Solution terms implied by the spectrum of ``A``.

    Each conjugate pair ``alpha +- i beta`` contributes
    ``e^{alpha t} cos(beta t)`` and ``e^{alpha t} sin(beta t)``; a real
    eigenvalue contributes ``e^{alpha t}``. Rates in the rendering are
    rounded to ``decimals`` places; ``modes`` keeps full precision.
    """
    spec = eigenvalues(A)
    modes = tuple(sorted(spec.modes(), key=lambda md: (-md.beta, -md.alpha)))
    return SolutionForm(modes, _render(modes, decimals))


def spectrum_report(A) -> dict:
    """JSON-ready ``{eigenvalues: [{re, im}], modes, rendering}``."""
    spec = eigenvalues(A)
    form = solution_form_report(A)
    return {
        "eigenvalues": spec.to_json(),
        "modes": [{"alpha": m.alpha, "beta": m.beta} for m in form.modes],
        "rendering": form.rendering,
    }


def load_matrix_csv(path):
    """Square matrix from a headerless CSV of ``d`` rows by ``d`` columns."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(cell) for cell in line.split(",")])
    A = np.asarray(rows, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got {A.shape}")
    return A


def dumps_report(A) -> str:
    return json.dumps(spectrum_report(A), indent=2, ensure_ascii=False)
