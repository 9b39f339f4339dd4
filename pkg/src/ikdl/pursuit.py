"""Greedy sparse coding.

omp runs orthogonal matching pursuit against an explicit dictionary with
unit-norm atoms; komp is the Gram-only counterpart that never touches
signal space and therefore works for kernelized dictionaries. Both share
the same contract: greedy argmax correlation selection with ties going to
the lowest index, a full least-squares re-solve on the support after every
selection, and a stop at the sparsity budget or at a residual threshold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import IkdlError, InputError
from .kernels import chol_solve

__all__ = ["SparseCode", "PursuitTrace", "omp", "komp", "omp_batch", "komp_batch"]

# Unit-norm tolerance for dictionary atoms handed to omp.
_ATOM_NORM_TOL = 1e-8


@dataclass
class SparseCode:
    """Result of coding one signal: support indices, their coefficients and
    the squared norm of the final residual (kernel-space for komp)."""

    support: tuple[int, ...]
    values: np.ndarray
    residual_sq: float
    dropped: int = 0

    def dense(self, n: int) -> np.ndarray:
        x = np.zeros(n)
        if self.support:
            x[list(self.support)] = self.values
        return x


@dataclass
class PursuitTrace:
    """Optional per-step diagnostics: residual after every accepted step
    (norm for omp, squared kernel norm for komp) and dropped candidates."""

    residuals: list[float] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    dropped: int = 0


def omp(D, y, s: int, eps: float | None = None, trace: PursuitTrace | None = None) -> SparseCode:
    """Orthogonal matching pursuit.

    Parameters
    ----------
    D : (m, n) dictionary with unit-norm columns (checked to 1e-8).
    y : (m,) signal.
    s : sparsity budget, 1 <= s <= n.
    eps : residual-norm stop; defaults to 1e-6 * ||y||. Pass 0 to code on
        the budget alone.

    The residual after every re-solve is orthogonal to the selected atoms
    up to round-off. A candidate whose support system stays singular even
    after the jittered retry is dropped and counted in ``dropped``.
    """
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if D.ndim != 2:
        raise InputError(f"dictionary must be 2-d, got shape {D.shape}")
    m, n = D.shape
    if y.shape != (m,):
        raise InputError(f"signal shape {y.shape} does not match dictionary rows {m}")
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(y))):
        raise InputError("non-finite entries in dictionary or signal")
    if not 1 <= s <= n:
        raise InputError(f"sparsity must satisfy 1 <= s <= {n}, got {s}")
    norms = np.linalg.norm(D, axis=0)
    worst = float(np.max(np.abs(norms - 1.0))) if n else 0.0
    if worst > _ATOM_NORM_TOL:
        raise InputError(f"dictionary atoms must be unit norm (max deviation {worst:.3e})")
    if eps is None:
        eps = 1e-6 * float(np.linalg.norm(y))
    if eps < 0:
        raise InputError(f"eps must be nonnegative, got {eps}")

    support: list[int] = []
    values = np.zeros(0)
    r = y.copy()
    unavailable = np.zeros(n, dtype=bool)
    dropped = 0
    if trace is not None:
        trace.residuals.append(float(np.linalg.norm(r)))
    while len(support) < s:
        if float(np.linalg.norm(r)) <= eps:
            break
        corr = np.abs(D.T @ r)
        corr[unavailable] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 0.0:
            break
        trial = support + [j]
        Ds = D[:, trial]
        try:
            xs = chol_solve(Ds.T @ Ds, Ds.T @ y)
        except np.linalg.LinAlgError:
            unavailable[j] = True
            dropped += 1
            continue
        support = trial
        values = xs
        unavailable[j] = True
        r = y - Ds @ xs
        if trace is not None:
            trace.residuals.append(float(np.linalg.norm(r)))
            trace.selected.append(j)
    if trace is not None:
        trace.dropped = dropped
    return SparseCode(tuple(support), values, float(r @ r), dropped)


def komp(G, p, kyy: float, s: int, eps: float | None = None,
         trace: PursuitTrace | None = None) -> SparseCode:
    """Kernel orthogonal matching pursuit on Gram quantities only.

    Parameters
    ----------
    G : (n, n) symmetric atom Gram matrix.
    p : (n,) correlations between the atoms and the query.
    kyy : squared kernel norm of the query (>= -1e-10; clamped at 0).
    s : sparsity budget, 1 <= s <= n.
    eps : stop when the squared residual drops to eps**2; defaults to
        1e-6 * sqrt(kyy). Pass 0 to code on the budget alone.

    The squared residual kyy - 2 p_S' x_S + x_S' G_SS x_S is tracked per
    step and clamped at zero on return.
    """
    G = np.asarray(G, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InputError(f"atom Gram must be square, got shape {G.shape}")
    n = G.shape[0]
    if p.shape != (n,):
        raise InputError(f"correlation vector shape {p.shape} does not match {n} atoms")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(p)) and np.isfinite(kyy)):
        raise InputError("non-finite entries in komp inputs")
    if kyy < -1e-10:
        raise InputError(f"query norm kyy must be nonnegative, got {kyy}")
    kyy = max(float(kyy), 0.0)
    if not 1 <= s <= n:
        raise InputError(f"sparsity must satisfy 1 <= s <= {n}, got {s}")
    if eps is None:
        eps = 1e-6 * float(np.sqrt(kyy))
    if eps < 0:
        raise InputError(f"eps must be nonnegative, got {eps}")

    # Support lives in a preallocated index buffer; slot k holds the current
    # trial atom so a dropped candidate is overwritten by the next one.
    sel = np.empty(s, dtype=np.intp)
    k = 0
    values = np.zeros(0)
    unavailable = np.zeros(n, dtype=bool)
    dropped = 0
    residual_sq = kyy
    eps_sq = eps * eps
    if trace is not None:
        trace.residuals.append(max(residual_sq, 0.0))
    while k < s:
        if residual_sq <= eps_sq:
            break
        c = p - G[:, sel[:k]] @ values if k else p.copy()
        np.abs(c, out=c)
        c[unavailable] = -1.0
        j = int(c.argmax())
        if c[j] <= 0.0:
            break
        sel[k] = j
        trial = sel[: k + 1]
        Gss = G[trial[:, None], trial]
        ps = p[trial]
        try:
            xs = chol_solve(Gss, ps)
        except np.linalg.LinAlgError:
            unavailable[j] = True
            dropped += 1
            continue
        k += 1
        values = xs
        unavailable[j] = True
        residual_sq = float(kyy - 2.0 * (ps @ xs) + xs @ Gss @ xs)
        if trace is not None:
            trace.residuals.append(max(residual_sq, 0.0))
            trace.selected.append(j)
    if trace is not None:
        trace.dropped = dropped
    return SparseCode(tuple(int(i) for i in sel[:k]), values, max(residual_sq, 0.0), dropped)


def _batch(code_one, N: int, n: int, threads: int) -> np.ndarray:
    def guarded(col: int) -> SparseCode:
        try:
            return code_one(col)
        except IkdlError as exc:
            raise type(exc)(f"column {col}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            codes = list(pool.map(guarded, range(N)))
    else:
        codes = [guarded(col) for col in range(N)]
    X = np.zeros((n, N))
    for col, code in enumerate(codes):
        if code.support:
            X[list(code.support), col] = code.values
    return X


def omp_batch(D, Y, s: int, eps: float | None = None, threads: int = 1) -> np.ndarray:
    """Code every column of Y against D; column l of the result equals
    omp(D, Y[:, l], s, eps).dense(n). Thread fan-out does not change the
    result since columns are independent."""
    D = np.asarray(D, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or D.ndim != 2 or Y.shape[0] != D.shape[0]:
        raise InputError(
            f"signal matrix shape {Y.shape} does not match dictionary {D.shape}"
        )
    return _batch(lambda l: omp(D, Y[:, l], s, eps), Y.shape[1], D.shape[1], threads)


def komp_batch(G, P, kyy, s: int, eps: float | None = None, threads: int = 1) -> np.ndarray:
    """Gram-side batch coder: column l of the result codes correlations
    P[:, l] with squared query norm kyy[l]."""
    G = np.asarray(G, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    kyy = np.asarray(kyy, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != G.shape[0]:
        raise InputError(f"correlation matrix shape {P.shape} does not match Gram {G.shape}")
    if kyy.shape != (P.shape[1],):
        raise InputError(f"kyy shape {kyy.shape} does not match {P.shape[1]} signals")
    return _batch(lambda l: komp(G, P[:, l], kyy[l], s, eps), P.shape[1], G.shape[0], threads)
