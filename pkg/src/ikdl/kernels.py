"""Kernel evaluation, Gram matrices and kernel-space norms.

Everything is dense float64. Three kernel families are supported: linear
x'y, Gaussian RBF exp(-||x-y||^2 / (2 sigma^2)) and polynomial
(x'y + alpha)^beta. Gram construction is vectorized; symmetric Grams are
exactly symmetrized so that downstream Cholesky factorizations never see
asymmetry noise, and the RBF diagonal is exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from .errors import InputError

__all__ = [
    "KernelKind",
    "KernelSpec",
    "GramMatrix",
    "kernel_eval",
    "kernel_vector",
    "gram",
    "knorm",
    "psd_jitter",
    "chol_solve",
]


class KernelKind(Enum):
    LINEAR = "linear"
    RBF = "rbf"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    sigma is the RBF width; alpha and beta are the polynomial offset and
    degree. Parameters that the chosen kind does not use are ignored.
    """

    kind: KernelKind = KernelKind.LINEAR
    sigma: float = 1.0
    alpha: float = 0.0
    beta: int = 2

    def __post_init__(self):
        if not isinstance(self.kind, KernelKind):
            raise InputError(f"unknown kernel kind: {self.kind!r}")
        if self.kind is KernelKind.RBF and not self.sigma > 0:
            raise InputError(f"rbf kernel needs sigma > 0, got {self.sigma}")
        if self.kind is KernelKind.POLYNOMIAL:
            if self.beta != int(self.beta) or self.beta < 1:
                raise InputError(
                    f"polynomial kernel needs integer beta >= 1, got {self.beta}"
                )


@dataclass(frozen=True)
class GramMatrix:
    """Dense Gram matrix together with the kernel that produced it.

    symmetric is True exactly when both signal sets were the same matrix,
    in which case entries is exactly equal to its transpose.
    """

    entries: np.ndarray
    spec: KernelSpec
    symmetric: bool

    @property
    def shape(self):
        return self.entries.shape


def _as_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"{name} must be a 1-d vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite entries")
    return x


def _as_signals(A, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InputError(f"{name} must be a 2-d signal matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} contains non-finite entries")
    return A


def gram_entries(K) -> np.ndarray:
    """Accept either a GramMatrix or a plain ndarray and return the array."""
    if isinstance(K, GramMatrix):
        return K.entries
    return np.asarray(K, dtype=np.float64)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate the kernel on a single pair of equally sized vectors."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.kind is KernelKind.LINEAR:
        return float(x @ y)
    if spec.kind is KernelKind.RBF:
        d = x - y
        return float(np.exp(-(d @ d) / (2.0 * spec.sigma**2)))
    return float((x @ y + spec.alpha) ** int(spec.beta))


def kernel_vector(spec: KernelSpec, Y, y) -> np.ndarray:
    """Evaluate k(Y[:, r], y) for every column r of Y."""
    Y = _as_signals(Y, "Y")
    y = _as_vector(y, "y")
    if Y.shape[0] != y.shape[0]:
        raise InputError(f"dimension mismatch: {Y.shape[0]} vs {y.shape[0]}")
    prods = Y.T @ y
    if spec.kind is KernelKind.LINEAR:
        return prods
    if spec.kind is KernelKind.RBF:
        sq = np.sum(Y * Y, axis=0) + y @ y - 2.0 * prods
        np.clip(sq, 0.0, None, out=sq)
        return np.exp(-sq / (2.0 * spec.sigma**2))
    return (prods + spec.alpha) ** int(spec.beta)


def gram(spec: KernelSpec, A, B) -> GramMatrix:
    """Gram matrix of two signal collections: entry (i, j) = k(A[:, i], B[:, j]).

    When A and B are the same matrix the result is exactly symmetric and,
    for the RBF kernel, has an exact unit diagonal.
    """
    symmetric = A is B
    A = _as_signals(A, "A")
    B = A if symmetric else _as_signals(B, "B")
    if not symmetric and A.shape == B.shape and np.array_equal(A, B):
        symmetric = True
        B = A
    if A.shape[0] != B.shape[0]:
        raise InputError(
            f"signal dimension mismatch: {A.shape[0]} vs {B.shape[0]}"
        )
    prods = A.T @ B
    if spec.kind is KernelKind.LINEAR:
        M = prods
        if symmetric:
            M = 0.5 * (M + M.T)
    elif spec.kind is KernelKind.RBF:
        sa = np.sum(A * A, axis=0)
        sb = sa if symmetric else np.sum(B * B, axis=0)
        sq = sa[:, None] + sb[None, :] - 2.0 * prods
        np.clip(sq, 0.0, None, out=sq)
        if symmetric:
            sq = 0.5 * (sq + sq.T)
            np.fill_diagonal(sq, 0.0)
        M = np.exp(-sq / (2.0 * spec.sigma**2))
    else:
        M = (prods + spec.alpha) ** int(spec.beta)
        if symmetric:
            M = 0.5 * (M + M.T)
    return GramMatrix(entries=M, spec=spec, symmetric=symmetric)


def knorm(a, K) -> float:
    """Kernel-space norm sqrt(a' K a) of a coefficient vector.

    The quadratic form is clamped at zero before the square root so that
    round-off on positive semidefinite K can never produce a NaN.
    """
    a = _as_vector(a, "a")
    Km = gram_entries(K)
    if Km.ndim != 2 or Km.shape[0] != Km.shape[1]:
        raise InputError(f"K must be square, got shape {Km.shape}")
    if Km.shape[0] != a.shape[0]:
        raise InputError(f"dimension mismatch: K is {Km.shape}, a has {a.shape[0]}")
    q = float(a @ (Km @ a))
    return float(np.sqrt(max(q, 0.0)))


def psd_jitter(K: np.ndarray) -> float:
    """Diagonal jitter 1e-10 * trace(K) / N used to regularize PSD solves."""
    n = K.shape[0]
    if n == 0:
        return 0.0
    return 1e-10 * float(np.trace(K)) / n


# Cached LAPACK handles: chol_solve sits on the hot path of every pursuit
# step, and the scipy wrapper overhead dominates on the tiny support systems.
_potrf, _potrs = scipy.linalg.get_lapack_funcs(
    ("potrf", "potrs"), (np.empty((1, 1), dtype=np.float64),)
)


def chol_solve(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve G x = b for symmetric positive (semi)definite G via Cholesky.

    A plain factorization is attempted first so that well-posed systems are
    solved exactly; if it fails, one retry with the PSD jitter added to the
    diagonal is made. Raises numpy.linalg.LinAlgError if both fail, which
    callers treat as a genuinely unusable system.
    """
    c, info = _potrf(G, lower=1, overwrite_a=0)
    if info != 0:
        eps = psd_jitter(G)
        c, info = _potrf(G + eps * np.eye(G.shape[0]), lower=1, overwrite_a=0)
        if info != 0:
            raise np.linalg.LinAlgError(
                f"Cholesky factorization failed on leading minor {info}"
            )
    x, info = _potrs(c, b, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"Cholesky back-substitution failed ({info})")
    return x
