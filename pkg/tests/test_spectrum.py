import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsode.spectrum import (
    MAX_DIM,
    EigenNonConvergence,
    balance,
    companion_from_char_poly,
    eigenvalues,
    hessenberg,
    load_matrix_csv,
    solution_form_report,
    spectrum_report,
)

# 4x4 system learned from 4 sin t - 5 sin 2t, as printed to two decimals.
PRINTED_4x4 = [
    ["-0.36", "-1.36", "-0.04", "0.45"],
    ["2.36", "0.43", "-0.47", "-1.06"],
    ["0.95", "-0.19", "-0.03", "0.74"],
    ["-0.16", "1.09", "-1.06", "-0.04"],
]

# Roots of its exact characteristic polynomial
# lam^4 + 12529/2500 lam^2 + 1901/100000 lam + 402198267/100000000.
PRINTED_4x4_EIGS = np.array(
    [
        -0.003163310282 - 1.001712604327j,
        -0.003163310282 + 1.001712604327j,
        0.003163310282 - 2.002046920378j,
        0.003163310282 + 2.002046920378j,
    ]
)


def _exact_char_poly(rows):
    """Faddeev-LeVerrier in rational arithmetic; no eigen-decomposition involved."""
    A = [[Fraction(x) for x in r] for r in rows]
    n = len(A)

    def mm(X, Y):
        return [[sum(X[i][k] * Y[k][j] for k in range(n)) for j in range(n)] for i in range(n)]

    M = [[Fraction(0)] * n for _ in range(n)]
    c = [Fraction(1)]
    for k in range(1, n + 1):
        AM = mm(A, M)
        M = [[AM[i][j] + (c[-1] if i == j else 0) for j in range(n)] for i in range(n)]
        AM = mm(A, M)
        c.append(-sum(AM[i][i] for i in range(n)) / k)
    return c


def _match(computed, expected):
    """Max distance after greedy nearest matching of two multisets."""
    remaining = list(expected)
    worst = 0.0
    for z in computed:
        j = int(np.argmin([abs(z - w) for w in remaining]))
        worst = max(worst, abs(z - remaining.pop(j)))
    return worst


def _constructed(rng, d):
    """Real matrix with known eigenvalues: block-diagonal core under a random similarity."""
    core = np.zeros((d, d))
    eigs = []
    i = 0
    while i < d:
        if i + 1 < d and rng.random() < 0.5:
            a, b = rng.uniform(-2, 2), rng.uniform(0.3, 3)
            core[i : i + 2, i : i + 2] = [[a, b], [-b, a]]
            eigs += [a + 1j * b, a - 1j * b]
            i += 2
        else:
            lam = rng.uniform(-3, 3)
            core[i, i] = lam
            eigs.append(complex(lam))
            i += 1
    # keep eigenvalues separated so the oracle comparison is well posed
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    S = Q @ np.diag(rng.uniform(0.5, 2.0, d))
    return S @ core @ np.linalg.inv(S), np.array(eigs)


def _separated(eigs, gap=0.05):
    z = np.asarray(eigs)
    dist = np.abs(z[:, None] - z[None, :]) + np.eye(len(z)) * 1e9
    return np.min(dist) > gap


class TestEigenvalues:
    def test_identity(self):
        np.testing.assert_array_equal(eigenvalues(np.eye(2)).values, [1, 1])

    def test_rotation(self):
        vals = eigenvalues([[0, 1], [-1, 0]]).values
        np.testing.assert_allclose(vals, [-1j, 1j], atol=1e-10)

    def test_printed_4x4_within_tolerance_of_ideal(self):
        A = np.array([[float(x) for x in r] for r in PRINTED_4x4])
        assert _match(eigenvalues(A).values, [2j, -2j, 1j, -1j]) <= 0.05

    def test_printed_4x4_char_poly_oracle(self):
        coeffs = _exact_char_poly(PRINTED_4x4)
        assert coeffs == [1, 0, Fraction(12529, 2500), Fraction(1901, 100000), Fraction(402198267, 100000000)]
        oracle = np.roots([float(c) for c in coeffs])
        assert _match(oracle, PRINTED_4x4_EIGS) < 1e-11
        A = np.array([[float(x) for x in r] for r in PRINTED_4x4])
        assert _match(eigenvalues(A).values, PRINTED_4x4_EIGS) < 1e-10

    def test_constructed_roots(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 100:
            d = int(rng.integers(1, 9))
            A, eigs = _constructed(rng, d)
            if not _separated(eigs):
                continue
            assert _match(eigenvalues(A).values, eigs) < 1e-6
            checked += 1

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 8))
    def test_conjugate_closure_trace_det(self, seed, d):
        A = np.random.default_rng(seed).normal(size=(d, d))
        spec = eigenvalues(A)
        vals = spec.values
        assert _match(vals, np.conj(vals)) < 1e-8
        assert abs(spec.trace - np.trace(A)) < 1e-6
        assert abs(spec.det - np.linalg.det(A)) < 1e-6 * max(1.0, abs(np.linalg.det(A)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 8))
    def test_similarity_invariance(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(d, d))
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        S = Q @ np.diag(rng.uniform(0.5, 2.0, d))
        a = eigenvalues(A).values
        b = eigenvalues(S @ A @ np.linalg.inv(S)).values
        if _separated(a, 1e-3):
            assert _match(a, b) < 1e-6

    def test_agrees_with_lapack(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            d = int(rng.integers(1, 12))
            A = rng.normal(size=(d, d))
            ref = np.linalg.eigvals(A)
            if _separated(ref, 1e-3):
                assert _match(eigenvalues(A).values, ref) < 1e-8 * max(1.0, np.linalg.norm(A))

    def test_sorted(self):
        vals = eigenvalues(np.random.default_rng(0).normal(size=(6, 6))).values
        keys = [(z.real, z.imag) for z in vals]
        assert keys == sorted(keys)

    def test_non_convergence(self):
        A = np.random.default_rng(1).normal(size=(8, 8))
        with pytest.raises(EigenNonConvergence) as info:
            eigenvalues(A, max_sweeps=1)
        assert info.value.matrix.shape == (8, 8)

    def test_size_limit(self):
        with pytest.raises(ValueError):
            eigenvalues(np.eye(MAX_DIM + 1))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            eigenvalues([[np.nan]])

    def test_hessenberg_and_balance_are_similarities(self):
        rng = np.random.default_rng(11)
        A = rng.normal(size=(6, 6)) * np.logspace(-3, 3, 6)
        H = hessenberg(balance(A))
        assert np.all(np.abs(np.tril(H, -2)) < 1e-12 * np.linalg.norm(H))
        assert _match(np.linalg.eigvals(H), np.linalg.eigvals(A)) < 1e-8 * np.linalg.norm(A)


class TestCompanion:
    def test_quartic(self):
        A = companion_from_char_poly([4, 0, 5, 0])
        expected = np.array([[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [-4, 0, -5, 0]], dtype=float)
        np.testing.assert_array_equal(A, expected)
        assert _match(eigenvalues(A).values, [1j, -1j, 2j, -2j]) < 1e-8

    def test_base_case(self):
        # lam - a has a0 = -a
        np.testing.assert_array_equal(companion_from_char_poly([-2.5]), [[2.5]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_roots_oracle(self, seed, d):
        rng = np.random.default_rng(seed)
        roots = []
        while len(roots) < d:
            if d - len(roots) >= 2 and rng.random() < 0.5:
                z = complex(rng.uniform(-1.5, 1.5), rng.uniform(0.3, 2.0))
                roots += [z, z.conjugate()]
            else:
                roots.append(complex(rng.uniform(-2, 2)))
        if not _separated(roots, 0.2):
            return
        p = np.real(np.poly(roots))  # convolution of linear factors
        A = companion_from_char_poly(p[1:][::-1])
        assert _match(eigenvalues(A).values, roots) < 1e-6


class TestSolutionForm:
    def test_printed_4x4(self):
        A = np.array([[float(x) for x in r] for r in PRINTED_4x4])
        form = solution_form_report(A)
        assert [round(m.beta) for m in form.modes] == [2, 1]
        assert all(abs(m.alpha) < 0.01 for m in form.modes)
        assert form.rendering == "f(c₁cos 2t, c₂sin 2t, c₃cos t, c₄sin t)"

    def test_companion_rendering(self):
        form = solution_form_report(companion_from_char_poly([4, 0, 5, 0]))
        assert form.rendering == "f(c₁cos 2t, c₂sin 2t, c₃cos t, c₄sin t)"

    def test_scalar_decay(self):
        form = solution_form_report([[-1.0]])
        assert [(m.alpha, m.beta) for m in form.modes] == [(-1.0, 0.0)]
        assert form.rendering == "c₁e^{−t}"

    def test_zero_matrix(self):
        form = solution_form_report(np.zeros((2, 2)))
        assert [(m.alpha, m.beta) for m in form.modes] == [(0.0, 0.0), (0.0, 0.0)]
        assert form.rendering == "f(c₁, c₂)"

    def test_damped_pair(self):
        form = solution_form_report([[-0.5, 3.0], [-3.0, -0.5]])
        assert form.rendering == "f(c₁e^{−0.5t}cos 3t, c₂e^{−0.5t}sin 3t)"


class TestReports:
    def test_json_shape(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("0,1\n-1,0\n")
        A = load_matrix_csv(p)
        doc = json.loads(json.dumps(spectrum_report(A)))
        assert set(doc) == {"eigenvalues", "modes", "rendering"}
        assert {"re", "im"} == set(doc["eigenvalues"][0])
        assert doc["modes"] == [{"alpha": 0.0, "beta": pytest.approx(1.0)}]

    def test_non_square_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("0,1,2\n-1,0,3\n")
        with pytest.raises(ValueError):
            load_matrix_csv(p)
