"""Kernel evaluation, Gram assembly and the shared Cholesky policy."""

import numpy as np
import pytest
import scipy.linalg

from ikdl.errors import InputError
from ikdl.kernels import (
    GramMatrix,
    KernelKind,
    KernelSpec,
    chol_solve,
    gram,
    gram_entries,
    kernel_eval,
    kernel_vector,
    knorm,
    psd_jitter,
)

from oracles import poly2_features

LIN = KernelSpec(KernelKind.LINEAR)
RBF = KernelSpec(KernelKind.RBF, sigma=1.5)
POLY = KernelSpec(KernelKind.POLYNOMIAL, alpha=2.0, beta=2)


def test_kernel_eval_matches_direct_formulas():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    assert kernel_eval(LIN, x, y) == pytest.approx(float(x @ y), abs=1e-14)
    d2 = float(np.sum((x - y) ** 2))
    assert kernel_eval(RBF, x, y) == pytest.approx(np.exp(-d2 / (2 * 1.5**2)), rel=1e-14)
    assert kernel_eval(POLY, x, y) == pytest.approx((float(x @ y) + 2.0) ** 2, rel=1e-14)


def test_poly2_feature_map_reproduces_kernel():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((4, 7))
    Phi = poly2_features(X, alpha=2.0)
    G = gram(POLY, X, X).entries
    assert np.allclose(Phi.T @ Phi, G, atol=1e-10)


def test_gram_shapes_and_cross_blocks():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((5, 3))
    B = rng.standard_normal((5, 4))
    G = gram(LIN, A, B)
    assert G.shape == (3, 4)
    assert not G.symmetric
    assert np.allclose(G.entries, A.T @ B, atol=1e-14)


def test_self_gram_is_exactly_symmetric_with_unit_rbf_diagonal():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((6, 9))
    G = gram(RBF, Y, Y)
    assert G.symmetric
    assert np.array_equal(G.entries, G.entries.T)
    assert np.all(np.diag(G.entries) == 1.0)
    # entries still match the scalar kernel closely
    for (r, c) in [(0, 5), (3, 3), (8, 2)]:
        want = kernel_eval(RBF, Y[:, r], Y[:, c])
        assert G.entries[r, c] == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_linear_self_gram_symmetric_and_psd():
    rng = np.random.default_rng(4)
    Y = rng.standard_normal((4, 8))
    G = gram(LIN, Y, Y).entries
    assert np.array_equal(G, G.T)
    w = np.linalg.eigvalsh(G)
    assert w.min() > -1e-10


def test_kernel_vector_matches_gram_column():
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((5, 6))
    y = rng.standard_normal(5)
    for spec in (LIN, RBF, POLY):
        v = kernel_vector(spec, Y, y)
        want = np.array([kernel_eval(spec, Y[:, r], y) for r in range(6)])
        assert np.allclose(v, want, rtol=1e-12, atol=1e-12)


def test_knorm_definition_and_clamp():
    rng = np.random.default_rng(6)
    Y = rng.standard_normal((4, 5))
    K = gram(LIN, Y, Y).entries
    a = rng.standard_normal(5)
    assert knorm(a, K) == pytest.approx(np.linalg.norm(Y @ a), rel=1e-12)
    # a tiny indefinite perturbation must not produce NaN
    assert knorm(np.zeros(5), K) == 0.0


def test_gram_entries_accepts_both_forms():
    M = np.eye(3)
    assert gram_entries(M) is M
    G = GramMatrix(M, LIN, True)
    assert gram_entries(G) is M


def test_psd_jitter_scale():
    G = np.diag([1.0, 3.0])
    assert psd_jitter(G) == pytest.approx(1e-10 * 4.0 / 2.0)


def test_chol_solve_matches_dense_solve():
    rng = np.random.default_rng(7)
    M = rng.standard_normal((6, 6))
    G = M @ M.T + 0.5 * np.eye(6)
    b = rng.standard_normal(6)
    x = chol_solve(G, b)
    assert np.allclose(G @ x, b, atol=1e-10)
    assert np.allclose(x, np.linalg.solve(G, b), atol=1e-10)


def test_chol_solve_jitter_rescues_semidefinite_system():
    # rank-1 PSD matrix: plain Cholesky fails, the jittered retry succeeds
    v = np.array([1.0, 2.0, 3.0])
    G = np.outer(v, v)
    b = v * (v @ v)  # in the range of G
    x = chol_solve(G, b)
    assert np.allclose(G @ x, b, rtol=1e-4)


def test_chol_solve_raises_on_indefinite_matrix():
    G = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    with pytest.raises(scipy.linalg.LinAlgError):
        chol_solve(G, np.ones(2))


def test_kernel_spec_validation():
    with pytest.raises(InputError):
        KernelSpec(KernelKind.RBF, sigma=0.0)
    with pytest.raises(InputError):
        KernelSpec(KernelKind.POLYNOMIAL, alpha=1.0, beta=0)
    with pytest.raises(InputError):
        KernelSpec(KernelKind.POLYNOMIAL, alpha=1.0, beta=2.5)


def test_gram_rejects_bad_inputs():
    Y = np.ones((3, 2))
    with pytest.raises(InputError):
        gram(LIN, Y, np.ones((4, 2)))  # dim mismatch
    bad = Y.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        gram(LIN, bad, bad)
    with pytest.raises(InputError):
        kernel_eval(LIN, np.ones(3), np.ones(4))
