"""Residual classification, evaluation reports and the coherence matrices."""

import numpy as np
import pytest

from ikdl.classify import (
    ClassifierModel,
    KernelClass,
    LinearClass,
    classify_kernel,
    classify_linear,
    classify_signal,
    discriminative_matrix,
    error_matrix,
    evaluate,
    train,
)
from ikdl.data import SplitSpec, save_model, split, synth_dataset
from ikdl.errors import InputError
from ikdl.kernels import KernelKind, KernelSpec, gram, kernel_eval, kernel_vector
from ikdl.learning import TrainConfig
from ikdl.pursuit import komp, omp

from oracles import poly2_features, residual_feature_space

LIN = KernelSpec(KernelKind.LINEAR)


def unit_cols(rng, m, n):
    M = rng.standard_normal((m, n))
    return M / np.linalg.norm(M, axis=0)


def linear_model(dicts, sparsity):
    cfg = TrainConfig(n_atoms=dicts[0].shape[1], sparsity=sparsity, iterations=1)
    return ClassifierModel("linear", [LinearClass(D) for D in dicts], None, cfg,
                           list(range(len(dicts))))


def kernel_model(signal_sets, coefs, spec, sparsity):
    cfg = TrainConfig(n_atoms=coefs[0].shape[1], sparsity=sparsity, iterations=1,
                      kernel=spec)
    payload = [
        KernelClass(A, Y, gram(spec, Y, Y).entries)
        for A, Y in zip(coefs, signal_sets)
    ]
    return ClassifierModel("kernel", payload, spec, cfg, list(range(len(coefs))))


# --- classify_linear ----------------------------------------------------------

def test_signal_equal_to_an_atom_lands_in_that_class():
    rng = np.random.default_rng(30)
    dicts = [unit_cols(rng, 8, 4) for _ in range(3)]
    model = linear_model(dicts, sparsity=1)
    y = dicts[2][:, 1].copy()
    cls, res = classify_linear(y, model)
    assert cls == 2
    assert res[2] <= 1e-10
    assert res[0] > 1e-3 and res[1] > 1e-3


def test_zero_signal_ties_to_class_zero():
    rng = np.random.default_rng(31)
    model = linear_model([unit_cols(rng, 5, 3) for _ in range(3)], sparsity=2)
    cls, res = classify_linear(np.zeros(5), model)
    assert cls == 0
    assert np.array_equal(res, np.zeros(3))


def test_linear_decisions_match_exhaustive_residual_recomputation():
    rng = np.random.default_rng(32)
    ds = synth_dataset(3, 30, 16, 3, 0.05, seed=7)
    tr, te = split(ds, SplitSpec(20, seed=7))
    cfg = TrainConfig(n_atoms=4, sparsity=2, iterations=5, gamma=1.0, seed=7)
    model = train(tr.by_class(), cfg)
    Y = te.signals
    for l in range(Y.shape[1]):
        y = Y[:, l]
        cls, res = classify_linear(y, model)
        naive = []
        for payload in model.classes:
            code = omp(payload.dictionary, y, cfg.sparsity)
            naive.append(np.linalg.norm(y - payload.dictionary @ code.dense(4)))
        naive = np.asarray(naive)
        assert np.allclose(res, naive, atol=1e-10)
        assert cls == int(np.argmin(naive))


def test_linear_residuals_scale_exactly_with_the_signal():
    # power-of-two scaling commutes with every float operation involved, so
    # the residual vector scales by exactly c and the decision cannot change
    rng = np.random.default_rng(33)
    model = linear_model([unit_cols(rng, 6, 3) for _ in range(3)], sparsity=2)
    for _ in range(20):
        y = rng.standard_normal(6)
        cls, res = classify_linear(y, model)
        cls4, res4 = classify_linear(4.0 * y, model)
        assert cls4 == cls
        assert np.array_equal(res4, 4.0 * res)


# --- classify_kernel ----------------------------------------------------------

def test_kernel_model_with_stored_dictionary_matches_linear_classifier():
    # equivalence construction: store the linear dictionary as the kernel
    # model's signals with identity coefficients; komp then reduces to omp
    rng = np.random.default_rng(34)
    dicts = [unit_cols(rng, 7, 4) for _ in range(3)]
    lm = linear_model(dicts, sparsity=2)
    km = kernel_model(dicts, [np.eye(4) for _ in range(3)], LIN, sparsity=2)
    for _ in range(50):
        y = rng.standard_normal(7)
        cl, rl = classify_linear(y, lm)
        ck, rk = classify_kernel(y, km)
        assert ck == cl
        assert np.allclose(rk, rl * rl, atol=1e-9)


def test_stored_training_signal_has_negligible_own_class_residual():
    rng = np.random.default_rng(35)
    spec = KernelSpec(KernelKind.RBF, sigma=1.0)
    sets = [rng.standard_normal((5, 6)) for _ in range(2)]
    coefs = []
    for Y in sets:
        K = gram(spec, Y, Y).entries
        coefs.append(np.diag(1.0 / np.sqrt(np.diag(K))))  # every signal an atom
    model = kernel_model(sets, coefs, spec, sparsity=1)
    y = sets[0][:, 3].copy()
    cls, res = classify_kernel(y, model)
    assert cls == 0
    assert res[0] <= 1e-8


def test_kernel_residuals_match_the_explicit_feature_map():
    rng = np.random.default_rng(36)
    spec = KernelSpec(KernelKind.POLYNOMIAL, alpha=2.0, beta=2)
    sets = [rng.standard_normal((3, 5)) for _ in range(2)]
    coefs = []
    for Y in sets:
        K = gram(spec, Y, Y).entries
        A = rng.standard_normal((5, 3))
        A /= np.sqrt(np.einsum("jk,jl,lk->k", A, K, A))  # unit kernel norms
        coefs.append(A)
    model = kernel_model(sets, coefs, spec, sparsity=2)
    for _ in range(10):
        y = rng.standard_normal(3)
        _, res = classify_kernel(y, model)
        for i, payload in enumerate(model.classes):
            p = payload.coefs.T @ kernel_vector(spec, payload.signals, y)
            code = komp(payload.atom_gram, p, kernel_eval(spec, y, y), 2)
            Phi = poly2_features(payload.signals, alpha=2.0)
            phi_y = poly2_features(y.reshape(-1, 1), alpha=2.0)[:, 0]
            want = residual_feature_space(phi_y, Phi, payload.coefs, code.dense(3))
            assert res[i] == pytest.approx(want, abs=1e-8)


def test_classify_signal_dispatches_on_model_kind():
    rng = np.random.default_rng(37)
    dicts = [unit_cols(rng, 6, 3) for _ in range(2)]
    lm = linear_model(dicts, sparsity=1)
    y = rng.standard_normal(6)
    cls_a, res_a = classify_signal(y, lm)
    cls_b, res_b = classify_linear(y, lm)
    assert cls_a == cls_b
    assert np.array_equal(res_a, res_b)
    with pytest.raises(InputError):
        classify_kernel(y, lm)


def test_single_class_model_always_returns_class_zero():
    rng = np.random.default_rng(38)
    Y = rng.standard_normal((6, 10))
    cfg = TrainConfig(n_atoms=3, sparsity=1, iterations=2, seed=0)
    model = train([Y], cfg)
    for _ in range(10):
        assert classify_signal(rng.standard_normal(6), model)[0] == 0


# --- evaluate -------------------------------------------------------------------

def test_perfectly_separable_toy_evaluates_to_full_accuracy():
    rng = np.random.default_rng(39)
    Y0 = np.outer([1.0, 0.0, 0.0], rng.uniform(0.5, 2.0, 8))
    Y1 = np.outer([0.0, 1.0, 0.0], rng.uniform(0.5, 2.0, 8))
    cfg = TrainConfig(n_atoms=1, sparsity=1, iterations=2, seed=0)
    model = train([Y0, Y1], cfg)
    report = evaluate([Y0, Y1], model)
    assert report.accuracy == 1.0
    assert np.array_equal(report.confusion, np.diag([8, 8]))


def test_all_zero_signals_fall_to_class_zero_giving_half_accuracy():
    rng = np.random.default_rng(40)
    model = linear_model([unit_cols(rng, 5, 3) for _ in range(2)], sparsity=1)
    Z = np.zeros((5, 6))
    report = evaluate([Z, Z], model)
    assert report.accuracy == 0.5
    assert np.array_equal(report.confusion, np.array([[6, 0], [6, 0]]))


def test_training_set_is_perfectly_classified_with_full_budget():
    # n = N and s = n: every training signal is exactly representable by its
    # own class, so train-on-X / test-on-X is exact
    rng = np.random.default_rng(41)
    classes = [rng.standard_normal((8, 4)) for _ in range(3)]
    cfg = TrainConfig(n_atoms=4, sparsity=4, iterations=2, gamma=0.0, seed=1)
    model = train(classes, cfg)
    report = evaluate(classes, model)
    assert report.accuracy == 1.0


def test_evaluate_report_shape_invariants_and_thread_determinism():
    ds = synth_dataset(3, 20, 12, 3, 0.05, seed=9)
    tr, te = split(ds, SplitSpec(12, seed=9))
    cfg = TrainConfig(n_atoms=3, sparsity=2, iterations=3, gamma=0.5, seed=9)
    model = train(tr.by_class(), cfg)
    r1 = evaluate(te.by_class(), model)
    counts = [Y.shape[1] for Y in te.by_class()]
    assert r1.confusion.sum(axis=1).tolist() == counts
    assert r1.accuracy == np.trace(r1.confusion) / sum(counts)
    assert r1.per_iteration_objective == model.objective
    r4 = evaluate(te.by_class(), model, threads=4)
    assert np.array_equal(r4.confusion, r1.confusion)


def test_evaluate_rejects_bad_test_sets():
    rng = np.random.default_rng(42)
    model = linear_model([unit_cols(rng, 5, 3) for _ in range(2)], sparsity=1)
    with pytest.raises(InputError):
        evaluate([np.zeros((5, 0)), np.zeros((5, 0))], model)
    with pytest.raises(InputError):
        evaluate([np.ones((5, 2))], model)
    with pytest.raises(InputError):
        evaluate([np.ones((4, 2)), np.ones((4, 2))], model)


def test_same_seed_training_serializes_byte_identically(tmp_path):
    ds = synth_dataset(2, 16, 10, 2, 0.05, seed=3)
    cfg = TrainConfig(n_atoms=3, sparsity=2, iterations=3, gamma=0.5, seed=3,
                      kernel=KernelSpec(KernelKind.RBF, sigma=1.0))
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(train(ds.by_class(), cfg), a)
    save_model(train(ds.by_class(), cfg), b)
    assert a.read_bytes() == b.read_bytes()


# --- error matrix ----------------------------------------------------------------

def test_error_matrix_row_argmin_reproduces_decisions():
    rng = np.random.default_rng(43)
    ds = synth_dataset(3, 16, 10, 2, 0.05, seed=5)
    cfg = TrainConfig(n_atoms=3, sparsity=2, iterations=3, gamma=0.5, seed=5,
                      kernel=KernelSpec(KernelKind.RBF, sigma=1.0))
    model = train(ds.by_class(), cfg)
    Y = rng.standard_normal((10, 12))
    M = error_matrix(Y, model)
    assert M.shape == (12, 3)
    for l in range(12):
        cls, res = classify_signal(Y[:, l], model)
        assert int(np.argmin(M[l])) == cls
        assert np.allclose(M[l], res, atol=1e-12)


def test_error_matrix_squares_linear_residuals():
    rng = np.random.default_rng(44)
    model = linear_model([unit_cols(rng, 6, 3) for _ in range(2)], sparsity=1)
    Y = rng.standard_normal((6, 5))
    M = error_matrix(Y, model)
    for l in range(5):
        _, res = classify_linear(Y[:, l], model)
        assert np.allclose(M[l], res * res, atol=1e-12)


def test_error_matrix_is_block_diagonal_for_separable_classes():
    rng = np.random.default_rng(45)
    Y0 = np.outer([1.0, 0.0, 0.0], rng.uniform(0.5, 2.0, 6))
    Y1 = np.outer([0.0, 0.0, 1.0], rng.uniform(0.5, 2.0, 6))
    cfg = TrainConfig(n_atoms=1, sparsity=1, iterations=2, seed=0)
    model = train([Y0, Y1], cfg)
    M = error_matrix(np.concatenate([Y0, Y1], axis=1), model)
    preds = np.argmin(M, axis=1)
    assert np.array_equal(preds, np.repeat([0, 1], 6))


# --- discriminative matrix ---------------------------------------------------------

def test_discriminative_matrix_orthogonal_dictionaries_have_zero_off_diagonal():
    D0 = np.eye(4)[:, :2]
    D1 = np.eye(4)[:, 2:]
    model = linear_model([D0, D1], sparsity=1)
    M = discriminative_matrix(model)
    assert M.shape == (2, 2)
    assert M[0, 1] == 0.0 and M[1, 0] == 0.0
    assert M[0, 0] == pytest.approx(2.0)  # ||I_2||_F^2


def test_discriminative_matrix_is_symmetric_and_matches_naive_loops():
    rng = np.random.default_rng(46)
    spec = KernelSpec(KernelKind.RBF, sigma=1.5)
    sets = [rng.standard_normal((5, 6)), rng.standard_normal((5, 7))]
    coefs = [rng.standard_normal((6, 3)), rng.standard_normal((7, 3))]
    model = kernel_model(sets, coefs, spec, sparsity=1)
    M = discriminative_matrix(model)
    assert np.array_equal(M, M.T)
    for i in range(2):
        for l in range(2):
            total = 0.0
            for a in range(3):
                for b in range(3):
                    acc = 0.0
                    for r in range(sets[i].shape[1]):
                        for c in range(sets[l].shape[1]):
                            acc += (coefs[i][r, a]
                                    * kernel_eval(spec, sets[i][:, r], sets[l][:, c])
                                    * coefs[l][c, b])
                    total += acc * acc
            assert M[i, l] == pytest.approx(total, rel=1e-10, abs=1e-10)
