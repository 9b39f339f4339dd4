"""Incoherent dictionary learning, in signal space and in kernel space.

Each class gets its own dictionary. Training alternates sparse coding with
an atom-by-atom sweep: every atom is refreshed from the current
representation error of the signals that use it, pushed away from the
other classes' dictionaries by an incoherence penalty with weight gamma,
normalized, and its representation row is refreshed in turn. The kernel
variant parameterizes atoms as coefficient combinations of the training
signals and touches the data only through Gram matrices; its atom update
is a single power-method step, so iterating it to convergence recovers
the dominant eigenvector of the underlying quadratic form.

Two representation-refresh rules are supported: ``aksvd`` recomputes the
row from the atom-excluded error, while ``uaksvd`` adds the new atom's
correlation with the full current error onto the existing row (valid
because the refreshed atom has unit norm).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError
from .kernels import KernelSpec, gram, gram_entries, knorm, psd_jitter
from .pursuit import komp_batch, omp_batch

__all__ = [
    "UpdateMode",
    "TrainConfig",
    "SweepDiagnostics",
    "LinearTrainResult",
    "KernelTrainResult",
    "init_dictionary",
    "init_coef_dictionary",
    "idl_atom_sweep",
    "ikdl_atom_sweep",
    "replace_unused_atoms",
    "replace_unused_kernel_atoms",
    "train_idl",
    "train_ikdl",
    "objective_idl",
    "objective_ikdl",
    "exact_atom_solve",
]

# An atom whose refreshed norm falls below this is considered collapsed and
# is reseeded from the worst-represented signal.
_COLLAPSE_TOL = 1e-12
# Diagonal Gram entries at or below this cannot seed a kernel atom.
_DIAG_TOL = 1e-14


class UpdateMode(Enum):
    AKSVD = "aksvd"
    UAKSVD = "uaksvd"


@dataclass(frozen=True)
class TrainConfig:
    """Shared training configuration for both dictionary flavours."""

    n_atoms: int
    sparsity: int
    iterations: int
    gamma: float = 0.0
    mode: UpdateMode = UpdateMode.AKSVD
    kernel: KernelSpec | None = None
    seed: int = 0
    recode_every_iteration: bool = True

    def __post_init__(self):
        if self.n_atoms < 1:
            raise InputError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if not 1 <= self.sparsity <= self.n_atoms:
            raise InputError(
                f"sparsity must satisfy 1 <= s <= n_atoms={self.n_atoms}, got {self.sparsity}"
            )
        if self.iterations < 1:
            raise InputError(f"iterations must be >= 1, got {self.iterations}")
        if self.gamma < 0:
            raise InputError(f"gamma must be nonnegative, got {self.gamma}")
        if self.seed < 0:
            raise InputError(f"seed must be nonnegative, got {self.seed}")
        if self.kernel is not None and not isinstance(self.kernel, KernelSpec):
            raise InputError("kernel must be a KernelSpec or None")


@dataclass
class SweepDiagnostics:
    """Counters for degenerate events inside sweeps."""

    collapsed: int = 0
    replaced_unused: int = 0


@dataclass
class LinearTrainResult:
    dictionaries: list[np.ndarray]
    codes: list[np.ndarray]
    objective: list[float]
    diagnostics: SweepDiagnostics = field(default_factory=SweepDiagnostics)


@dataclass
class KernelTrainResult:
    coefs: list[np.ndarray]
    grams: list[list[np.ndarray]]
    codes: list[np.ndarray]
    objective: list[float]
    diagnostics: SweepDiagnostics = field(default_factory=SweepDiagnostics)


def init_dictionary(Y, n: int, seed) -> np.ndarray:
    """Seeded dictionary init: n distinct training columns, normalized.

    Columns are visited in a seeded random order; zero-norm columns are
    skipped (more than 10 * n skips is an error). If the class has fewer
    signals than atoms, the remaining atoms are normalized Gaussian draws.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise InputError(f"signal matrix must be 2-d, got shape {Y.shape}")
    m, N = Y.shape
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if N < 1:
        raise InputError("cannot initialize a dictionary from an empty class")
    rng = np.random.default_rng(seed)
    atoms = []
    failures = 0
    for idx in rng.permutation(N):
        if len(atoms) == n:
            break
        col = Y[:, idx]
        nrm = float(np.linalg.norm(col))
        if nrm <= _DIAG_TOL:
            failures += 1
            if failures > 10 * n:
                raise NumericalError("too many zero-norm training columns during init")
            continue
        atoms.append(col / nrm)
    while len(atoms) < n:
        g = rng.standard_normal(m)
        nrm = float(np.linalg.norm(g))
        if nrm <= _DIAG_TOL:
            failures += 1
            if failures > 10 * n:
                raise NumericalError("dictionary init failed to draw usable atoms")
            continue
        atoms.append(g / nrm)
    return np.column_stack(atoms)


def init_coef_dictionary(N: int, n: int, K, seed) -> np.ndarray:
    """Seeded kernel dictionary init in coefficient space.

    Each atom is a one-hot vector at a distinct seeded random signal index,
    scaled so its kernel norm is exactly 1. Indices whose diagonal Gram
    entry is <= 1e-14 are skipped. If n exceeds N, the surplus atoms are
    Gaussian coefficient draws normalized to unit kernel norm.
    """
    Km = gram_entries(K)
    if Km.ndim != 2 or Km.shape != (N, N):
        raise InputError(f"K must be {N}x{N}, got shape {Km.shape}")
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if N < 1:
        raise InputError("cannot initialize a kernel dictionary from an empty class")
    rng = np.random.default_rng(seed)
    diag = np.diag(Km)
    atoms = []
    failures = 0
    for idx in rng.permutation(N):
        if len(atoms) == n:
            break
        if diag[idx] <= _DIAG_TOL:
            failures += 1
            if failures > 10 * n:
                raise NumericalError("too many degenerate Gram diagonal entries during init")
            continue
        a = np.zeros(N)
        a[idx] = 1.0 / np.sqrt(diag[idx])
        atoms.append(a)
    while len(atoms) < n:
        g = rng.standard_normal(N)
        nrm = knorm(g, Km)
        if nrm <= _DIAG_TOL:
            failures += 1
            if failures > 10 * n:
                raise NumericalError("kernel dictionary init failed to draw usable atoms")
            continue
        atoms.append(g / nrm)
    return np.column_stack(atoms)


def _worst_signal_atoms(res_sq: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` worst-represented signals, worst first,
    wrapping around if more replacements than signals are needed."""
    order = np.argsort(-res_sq, kind="stable")
    return order[np.arange(count) % len(order)]


def replace_unused_atoms(D, X, E, Y, diag: SweepDiagnostics | None = None) -> np.ndarray:
    """Replace every atom whose representation row is all zero by the
    normalized signal with the largest current residual norm. Multiple dead
    atoms take distinct signals in decreasing residual order. Representation
    rows of replaced atoms stay zero, so the error state is unchanged."""
    D = np.array(D, dtype=np.float64, copy=True)
    X = np.asarray(X, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    dead = np.flatnonzero(~X.astype(bool).any(axis=1))
    if dead.size == 0:
        return D
    res_sq = np.sum(E * E, axis=0)
    col_norms = np.linalg.norm(Y, axis=0)
    usable = col_norms > _DIAG_TOL
    if not np.any(usable):
        raise NumericalError("cannot replace unused atoms: all signals are zero")
    res_sq = np.where(usable, res_sq, -np.inf)
    picks = _worst_signal_atoms(res_sq, dead.size)
    for j, p in zip(dead, picks):
        D[:, j] = Y[:, p] / col_norms[p]
    if diag is not None:
        diag.replaced_unused += int(dead.size)
    return D


def replace_unused_kernel_atoms(A, X, E, K, diag: SweepDiagnostics | None = None) -> np.ndarray:
    """Kernel-space analogue: dead atoms become one-hot coefficient vectors
    at the worst-represented signal index, scaled to unit kernel norm."""
    A = np.array(A, dtype=np.float64, copy=True)
    X = np.asarray(X, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    Km = gram_entries(K)
    dead = np.flatnonzero(~X.astype(bool).any(axis=1))
    if dead.size == 0:
        return A
    res_sq = np.einsum("ij,ij->j", E, Km @ E)
    dk = np.diag(Km)
    usable = dk > _DIAG_TOL
    if not np.any(usable):
        raise NumericalError("cannot replace unused atoms: degenerate Gram diagonal")
    res_sq = np.where(usable, res_sq, -np.inf)
    picks = _worst_signal_atoms(res_sq, dead.size)
    for j, p in zip(dead, picks):
        A[:, j] = 0.0
        A[p, j] = 1.0 / np.sqrt(dk[p])
    if diag is not None:
        diag.replaced_unused += int(dead.size)
    return A


def _flip_sign(atom: np.ndarray, row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Sign convention: the largest-magnitude coefficient of the row is made
    # positive; flipping both factors leaves their product unchanged.
    if row.size and row[int(np.argmax(np.abs(row)))] < 0.0:
        return -atom, -row
    return atom, row


def idl_atom_sweep(Y, D, Dbar, X, gamma: float, mode: UpdateMode,
                   diag: SweepDiagnostics | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One atom-by-atom sweep of a class dictionary in signal space.

    For every atom j with a nonempty support I_j: the atom-excluded error
    F = E[:, I_j] + d_j x_j is formed, the atom is refreshed to
    F x_j' - 2 gamma Dbar Dbar' d_j and normalized, the representation row
    is refreshed per the update mode, and the error is recomposed. Atoms
    with empty supports are skipped and reseeded afterwards from the
    worst-represented signals. Returns updated copies of (D, X).
    """
    Y = np.asarray(Y, dtype=np.float64)
    D = np.array(D, dtype=np.float64, copy=True)
    X = np.array(X, dtype=np.float64, copy=True)
    if Dbar is None:
        Dbar = np.zeros((Y.shape[0], 0))
    Dbar = np.asarray(Dbar, dtype=np.float64)
    m, n = D.shape
    if Y.shape[0] != m or X.shape != (n, Y.shape[1]) or Dbar.shape[0] != m:
        raise InputError(
            f"inconsistent shapes: Y {Y.shape}, D {D.shape}, X {X.shape}, Dbar {Dbar.shape}"
        )
    if gamma < 0:
        raise InputError(f"gamma must be nonnegative, got {gamma}")
    mode = UpdateMode(mode)

    E = Y - D @ X
    for j in range(n):
        used = np.flatnonzero(X[j])
        if used.size == 0:
            continue
        d = D[:, j]
        x = X[j, used]
        F = E[:, used] + np.outer(d, x)
        d_new = F @ x
        if gamma != 0.0 and Dbar.shape[1]:
            d_new = d_new - (2.0 * gamma) * (Dbar @ (Dbar.T @ d))
        nrm = float(np.linalg.norm(d_new))
        if nrm < _COLLAPSE_TOL:
            res_sq = np.sum(E * E, axis=0)
            col_norms = np.linalg.norm(Y, axis=0)
            res_sq = np.where(col_norms > _DIAG_TOL, res_sq, -np.inf)
            if not np.any(res_sq > -np.inf):
                raise NumericalError("atom collapse with no usable replacement signal")
            p = int(np.argmax(res_sq))
            d_new = Y[:, p] / col_norms[p]
            if diag is not None:
                diag.collapsed += 1
        else:
            d_new = d_new / nrm
        if mode is UpdateMode.AKSVD:
            x_new = F.T @ d_new
        else:
            x_new = E[:, used].T @ d_new + x
        d_new, x_new = _flip_sign(d_new, x_new)
        D[:, j] = d_new
        X[j, used] = x_new
        E[:, used] = F - np.outer(d_new, x_new)
    D = replace_unused_atoms(D, X, E, Y, diag)
    return D, X


def ikdl_atom_sweep(K, A, Khat, X, gamma: float, mode: UpdateMode,
                    diag: SweepDiagnostics | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One atom-by-atom sweep of a kernelized class dictionary.

    Mirrors idl_atom_sweep with the error tracked as E = I - A X, the atom
    refresh K F x_j' - 2 gamma Khat' Khat a_j (one power-method step on the
    atom's quadratic form), normalization in the kernel norm, and the
    representation refreshed through K. Khat stacks the other classes'
    dictionaries applied to the cross Grams, so Khat' Khat penalizes
    coherence with them. Returns updated copies of (A, X).
    """
    Km = gram_entries(K)
    A = np.array(A, dtype=np.float64, copy=True)
    X = np.array(X, dtype=np.float64, copy=True)
    N, n = A.shape
    if Khat is None:
        Khat = np.zeros((0, N))
    Khat = np.asarray(Khat, dtype=np.float64)
    if Km.shape != (N, N) or X.shape[0] != n or X.shape[1] != N or Khat.shape[1] != N:
        raise InputError(
            f"inconsistent shapes: K {Km.shape}, A {A.shape}, X {X.shape}, Khat {Khat.shape}"
        )
    if gamma < 0:
        raise InputError(f"gamma must be nonnegative, got {gamma}")
    mode = UpdateMode(mode)

    E = np.eye(N) - A @ X
    dk = np.diag(Km)
    for j in range(n):
        used = np.flatnonzero(X[j])
        if used.size == 0:
            continue
        a = A[:, j]
        x = X[j, used]
        F = E[:, used] + np.outer(a, x)
        a_new = Km @ (F @ x)
        if gamma != 0.0 and Khat.shape[0]:
            a_new = a_new - (2.0 * gamma) * (Khat.T @ (Khat @ a))
        nrm = knorm(a_new, Km)
        if nrm < _COLLAPSE_TOL:
            res_sq = np.einsum("ij,ij->j", E, Km @ E)
            res_sq = np.where(dk > _DIAG_TOL, res_sq, -np.inf)
            if not np.any(res_sq > -np.inf):
                raise NumericalError("atom collapse with no usable replacement signal")
            p = int(np.argmax(res_sq))
            a_new = np.zeros(N)
            a_new[p] = 1.0 / np.sqrt(dk[p])
            if diag is not None:
                diag.collapsed += 1
        else:
            a_new = a_new / nrm
        Ka = Km @ a_new
        if mode is UpdateMode.AKSVD:
            x_new = F.T @ Ka
        else:
            x_new = E[:, used].T @ Ka + x
        a_new, x_new = _flip_sign(a_new, x_new)
        A[:, j] = a_new
        X[j, used] = x_new
        E[:, used] = F - np.outer(a_new, x_new)
    A = replace_unused_kernel_atoms(A, X, E, Km, diag)
    return A, X


def _check_classes(classes) -> list[np.ndarray]:
    if not classes:
        raise InputError("need at least one class")
    out = []
    m = None
    for i, Y in enumerate(classes):
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[1] < 1:
            raise InputError(f"class {i}: need a 2-d signal matrix with at least one column")
        if not np.all(np.isfinite(Y)):
            raise InputError(f"class {i}: non-finite entries")
        if m is None:
            m = Y.shape[0]
        elif Y.shape[0] != m:
            raise InputError(f"class {i}: dimension {Y.shape[0]} does not match {m}")
        out.append(Y)
    return out


def objective_idl(classes, dictionaries, codes, gamma: float) -> float:
    """Total squared representation error plus gamma times the summed
    squared cross-class dictionary products (both ordered pairs counted)."""
    total = 0.0
    for Y, D, X in zip(classes, dictionaries, codes):
        R = np.asarray(Y, dtype=np.float64) - D @ X
        total += float(np.sum(R * R))
    pen = 0.0
    C = len(dictionaries)
    for i in range(C):
        for l in range(C):
            if l == i:
                continue
            M = dictionaries[i].T @ dictionaries[l]
            pen += float(np.sum(M * M))
    return total + gamma * pen


def objective_ikdl(grams, coefs, codes, gamma: float) -> float:
    """Kernel-space objective: sum of trace(E' K_ii E) with E = I - A_i X_i,
    plus gamma times the summed squared cross-class atom products
    A_i' K_li A_l over ordered pairs. `grams` is the full C x C table with
    grams[i][l] holding the Gram of class l against class i (so the entry
    at [i][i] is the class Gram itself)."""
    C = len(coefs)
    total = 0.0
    for i in range(C):
        Kii = gram_entries(grams[i][i])
        E = np.eye(Kii.shape[0]) - coefs[i] @ codes[i]
        total += float(np.einsum("ij,ij->", E, Kii @ E))
    pen = 0.0
    for i in range(C):
        for l in range(C):
            if l == i:
                continue
            Kli = gram_entries(grams[l][i])
            M = coefs[i].T @ Kli @ coefs[l]
            pen += float(np.sum(M * M))
    return total + gamma * pen


def exact_atom_solve(K, F, x, gamma: float, Khat) -> np.ndarray:
    """Closed-form single-atom refresh used as a test oracle.

    Solves (K ||x||^2 + 2 gamma Khat' Khat + jitter I) a = K F x for the
    atom coefficients; the stationarity residual of the result is checked
    by tests, not here. Raises NumericalError if the jittered system is
    still singular.
    """
    Km = gram_entries(K)
    F = np.asarray(F, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if Khat is None:
        Khat = np.zeros((0, Km.shape[0]))
    Khat = np.asarray(Khat, dtype=np.float64)
    N = Km.shape[0]
    if F.shape[0] != N or x.shape != (F.shape[1],) or Khat.shape[1] != N:
        raise InputError(
            f"inconsistent shapes: K {Km.shape}, F {F.shape}, x {x.shape}, Khat {Khat.shape}"
        )
    M = Km * float(x @ x)
    if gamma != 0.0 and Khat.shape[0]:
        M = M + (2.0 * gamma) * (Khat.T @ Khat)
    M = M + psd_jitter(M) * np.eye(N)
    rhs = Km @ (F @ x)
    try:
        c = scipy.linalg.cho_factor(M, lower=True)
        return scipy.linalg.cho_solve(c, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular atom system after jitter: {exc}") from exc


def _spawn_seeds(seed: int, count: int):
    return np.random.SeedSequence(seed).spawn(count)


def train_idl(classes, cfg: TrainConfig, init: list[np.ndarray] | None = None) -> LinearTrainResult:
    """Train per-class incoherent dictionaries in signal space.

    Every iteration visits classes in ascending order: the class is
    re-coded against its current dictionary (budget-only coding), the
    complement dictionary is rebuilt from the most recent other-class
    dictionaries, and one atom sweep runs. The objective is recorded once
    before training and after every iteration.
    """
    if cfg.kernel is not None:
        raise InputError("train_idl expects a config without a kernel")
    ys = _check_classes(classes)
    C = len(ys)
    diag = SweepDiagnostics()
    if init is not None:
        if len(init) != C:
            raise InputError(f"init must provide {C} dictionaries")
        dicts = [np.array(D, dtype=np.float64, copy=True) for D in init]
        for i, D in enumerate(dicts):
            if D.shape != (ys[i].shape[0], cfg.n_atoms):
                raise InputError(f"init dictionary {i} has shape {D.shape}")
    else:
        seeds = _spawn_seeds(cfg.seed, C)
        dicts = [init_dictionary(ys[i], cfg.n_atoms, seeds[i]) for i in range(C)]
    codes = [omp_batch(dicts[i], ys[i], cfg.sparsity, eps=0.0) for i in range(C)]
    objective = [objective_idl(ys, dicts, codes, cfg.gamma)]
    for it in range(cfg.iterations):
        for i in range(C):
            if it > 0 and cfg.recode_every_iteration:
                codes[i] = omp_batch(dicts[i], ys[i], cfg.sparsity, eps=0.0)
            Dbar = (
                np.concatenate([dicts[l] for l in range(C) if l != i], axis=1)
                if C > 1
                else None
            )
            dicts[i], codes[i] = idl_atom_sweep(
                ys[i], dicts[i], Dbar, codes[i], cfg.gamma, cfg.mode, diag
            )
        objective.append(objective_idl(ys, dicts, codes, cfg.gamma))
    return LinearTrainResult(dicts, codes, objective, diag)


def train_ikdl(classes, cfg: TrainConfig, init: list[np.ndarray] | None = None) -> KernelTrainResult:
    """Train per-class incoherent kernel dictionaries.

    All within- and cross-class Gram matrices are computed once up front.
    Iterations mirror train_idl, with the cross-class stack rebuilt from
    the most recent coefficient dictionaries before each class sweep.
    """
    if cfg.kernel is None:
        raise InputError("train_ikdl needs cfg.kernel")
    ys = _check_classes(classes)
    C = len(ys)
    spec = cfg.kernel
    grams: list[list[np.ndarray | None]] = [[None] * C for _ in range(C)]
    for i in range(C):
        grams[i][i] = gram(spec, ys[i], ys[i]).entries
    for i in range(C):
        for l in range(i + 1, C):
            # Entry [i][l] holds the Gram of class l's signals against class
            # i's signals (rows indexed by class l); the mirror entry is its
            # exact transpose.
            Kil = gram(spec, ys[l], ys[i]).entries
            grams[i][l] = Kil
            grams[l][i] = Kil.T
    diag = SweepDiagnostics()
    if init is not None:
        if len(init) != C:
            raise InputError(f"init must provide {C} coefficient dictionaries")
        coefs = [np.array(A, dtype=np.float64, copy=True) for A in init]
        for i, A in enumerate(coefs):
            if A.shape != (ys[i].shape[1], cfg.n_atoms):
                raise InputError(f"init coefficient dictionary {i} has shape {A.shape}")
    else:
        seeds = _spawn_seeds(cfg.seed, C)
        coefs = [
            init_coef_dictionary(ys[i].shape[1], cfg.n_atoms, grams[i][i], seeds[i])
            for i in range(C)
        ]

    def code_class(i: int) -> np.ndarray:
        Kii = grams[i][i]
        G = coefs[i].T @ Kii @ coefs[i]
        P = coefs[i].T @ Kii
        return komp_batch(G, P, np.diag(Kii), cfg.sparsity, eps=0.0)

    codes = [code_class(i) for i in range(C)]
    objective = [objective_ikdl(grams, coefs, codes, cfg.gamma)]
    for it in range(cfg.iterations):
        for i in range(C):
            if it > 0 and cfg.recode_every_iteration:
                codes[i] = code_class(i)
            if C > 1:
                Khat = np.concatenate(
                    [coefs[l].T @ grams[i][l] for l in range(C) if l != i], axis=0
                )
            else:
                Khat = None
            coefs[i], codes[i] = ikdl_atom_sweep(
                grams[i][i], coefs[i], Khat, codes[i], cfg.gamma, cfg.mode, diag
            )
        objective.append(objective_ikdl(grams, coefs, codes, cfg.gamma))
    return KernelTrainResult(coefs, grams, codes, objective, diag)
