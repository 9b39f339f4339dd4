"""Residual classification on top of the per-class dictionary trainers.

A trained model keeps one dictionary per class; a query is sparse-coded
against every class and assigned to the class with the smallest
representation residual, ties going to the lowest class index. Linear
models compare residual norms; kernel models compare squared kernel-space
residuals computed from Gram quantities alone.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InputError
from .kernels import KernelSpec, gram, gram_entries, kernel_eval, kernel_vector
from .learning import TrainConfig, train_idl, train_ikdl
from .pursuit import komp, omp

__all__ = [
    "LinearClass",
    "KernelClass",
    "ClassifierModel",
    "EvalReport",
    "train",
    "classify_linear",
    "classify_kernel",
    "classify_signal",
    "evaluate",
    "error_matrix",
    "discriminative_matrix",
]


@dataclass
class LinearClass:
    """Per-class payload of a linear model: the dictionary itself."""

    dictionary: np.ndarray


@dataclass
class KernelClass:
    """Per-class payload of a kernel model: coefficient dictionary, the
    stored training signals and their Gram matrix."""

    coefs: np.ndarray
    signals: np.ndarray
    gram: np.ndarray

    @cached_property
    def atom_gram(self) -> np.ndarray:
        return self.coefs.T @ self.gram @ self.coefs


@dataclass
class ClassifierModel:
    kind: str  # "linear" | "kernel"
    classes: list
    kernel: KernelSpec | None
    cfg: TrainConfig
    labels: list[int]
    objective: list[float] = field(default_factory=list)
    # Wall-clock training time; kept in memory only so that serialized
    # models stay byte-identical across reruns with the same seed.
    train_time_s: float | None = None

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def signal_dim(self) -> int:
        if self.kind == "linear":
            return self.classes[0].dictionary.shape[0]
        return self.classes[0].signals.shape[0]


def train(classes, cfg: TrainConfig, labels: list[int] | None = None) -> ClassifierModel:
    """Train one dictionary per class and wrap the result in a model.

    The model kind follows cfg.kernel: absent means a signal-space model,
    present (including an explicit linear kernel) means a kernel model.
    Training time is measured with a monotonic clock around the trainer
    call only.
    """
    if labels is not None and len(labels) != len(classes):
        raise InputError(f"got {len(labels)} labels for {len(classes)} classes")
    ids = list(labels) if labels is not None else list(range(len(classes)))
    t0 = time.perf_counter()
    if cfg.kernel is None:
        result = train_idl(classes, cfg)
        elapsed = time.perf_counter() - t0
        payload = [LinearClass(D) for D in result.dictionaries]
        return ClassifierModel(
            "linear", payload, None, cfg, ids, result.objective, elapsed
        )
    result = train_ikdl(classes, cfg)
    elapsed = time.perf_counter() - t0
    payload = [
        KernelClass(result.coefs[i], np.asarray(classes[i], dtype=np.float64),
                    result.grams[i][i])
        for i in range(len(classes))
    ]
    return ClassifierModel(
        "kernel", payload, cfg.kernel, cfg, ids, result.objective, elapsed
    )


def classify_linear(y, model: ClassifierModel) -> tuple[int, np.ndarray]:
    """Classify one signal with a linear model.

    Returns (class index, residual-norm vector); the winner is the argmin
    of the residuals with ties going to the lowest index.
    """
    if model.kind != "linear":
        raise InputError("classify_linear needs a linear model")
    y = np.asarray(y, dtype=np.float64)
    res = np.empty(model.n_classes)
    for i, payload in enumerate(model.classes):
        code = omp(payload.dictionary, y, model.cfg.sparsity)
        res[i] = np.sqrt(code.residual_sq)
    return int(np.argmin(res)), res


def classify_kernel(y, model: ClassifierModel) -> tuple[int, np.ndarray]:
    """Classify one signal with a kernel model.

    Returns (class index, squared-kernel-residual vector). Residuals are
    computed from Gram quantities only and clamped at zero.
    """
    if model.kind != "kernel":
        raise InputError("classify_kernel needs a kernel model")
    y = np.asarray(y, dtype=np.float64)
    kyy = kernel_eval(model.kernel, y, y)
    res = np.empty(model.n_classes)
    for i, payload in enumerate(model.classes):
        p = payload.coefs.T @ kernel_vector(model.kernel, payload.signals, y)
        code = komp(payload.atom_gram, p, kyy, model.cfg.sparsity)
        res[i] = code.residual_sq
    return int(np.argmin(res)), res


def classify_signal(y, model: ClassifierModel) -> tuple[int, np.ndarray]:
    """Dispatch to the model's classifier kind."""
    if model.kind == "linear":
        return classify_linear(y, model)
    return classify_kernel(y, model)


@dataclass
class EvalReport:
    accuracy: float
    train_time_s: float
    test_time_s: float
    confusion: np.ndarray
    per_iteration_objective: list[float]
    predictions: list[np.ndarray]


def evaluate(test_classes, model: ClassifierModel, threads: int = 1) -> EvalReport:
    """Classify labelled test data and report accuracy plus a confusion
    matrix (rows true class, columns predicted). test_classes must align
    with the model's class order; empty per-class matrices are allowed as
    long as the total is nonzero."""
    if len(test_classes) != model.n_classes:
        raise InputError(
            f"got {len(test_classes)} test classes for a {model.n_classes}-class model"
        )
    mats = [np.asarray(Y, dtype=np.float64) for Y in test_classes]
    total = sum(Y.shape[1] for Y in mats)
    if total == 0:
        raise InputError("empty test set")
    for Y in mats:
        if Y.ndim != 2 or Y.shape[0] != model.signal_dim:
            raise InputError(
                f"test signals of dimension {Y.shape[0]} do not match model "
                f"dimension {model.signal_dim}"
            )
    C = model.n_classes
    confusion = np.zeros((C, C), dtype=np.int64)
    predictions: list[np.ndarray] = []
    t0 = time.perf_counter()
    for true_id, Y in enumerate(mats):
        cols = range(Y.shape[1])
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                preds = list(pool.map(lambda l: classify_signal(Y[:, l], model)[0], cols))
        else:
            preds = [classify_signal(Y[:, l], model)[0] for l in cols]
        preds = np.asarray(preds, dtype=np.int64)
        predictions.append(preds)
        for p in preds:
            confusion[true_id, p] += 1
    test_time = time.perf_counter() - t0
    accuracy = float(np.trace(confusion)) / total
    train_time = model.train_time_s if model.train_time_s is not None else float("nan")
    return EvalReport(accuracy, train_time, test_time, confusion,
                      list(model.objective), predictions)


def error_matrix(signals, model: ClassifierModel, threads: int = 1) -> np.ndarray:
    """Squared representation residual of every test signal (rows) against
    every class (columns). Row argmins reproduce the classifier decisions."""
    Y = np.asarray(signals, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != model.signal_dim:
        raise InputError(f"signal matrix shape {Y.shape} does not match model")

    def one(l: int) -> np.ndarray:
        _, res = classify_signal(Y[:, l], model)
        return res * res if model.kind == "linear" else res

    cols = range(Y.shape[1])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, cols))
    else:
        rows = [one(l) for l in cols]
    return np.asarray(rows).reshape(Y.shape[1], model.n_classes)


def discriminative_matrix(model: ClassifierModel) -> np.ndarray:
    """Symmetric class-by-class coherence table: entry (i, l) is the squared
    Frobenius norm of the product between the two class dictionaries (taken
    through the kernel for kernel models). The diagonal is included."""
    C = model.n_classes
    out = np.empty((C, C))
    if model.kind == "linear":
        for i in range(C):
            for l in range(i, C):
                M = model.classes[i].dictionary.T @ model.classes[l].dictionary
                out[i, l] = out[l, i] = float(np.sum(M * M))
        return out
    for i in range(C):
        for l in range(i, C):
            if i == l:
                Kli = model.classes[i].gram
            else:
                # Gram of class i's signals against class l's, rows by class i.
                Kli = gram_entries(
                    gram(model.kernel, model.classes[i].signals, model.classes[l].signals)
                )
            M = model.classes[i].coefs.T @ Kli @ model.classes[l].coefs
            out[i, l] = out[l, i] = float(np.sum(M * M))
    return out
