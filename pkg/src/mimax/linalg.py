"""Sparse kernels and Krylov solvers shared by all numerical modules.

Matrices are scipy CSR throughout; the helpers here pin down the exact
behaviors the rest of the package relies on (deterministic summation,
no value thresholding, canonical storage) and add the two solvers scipy
does not provide in the needed form: a flexible GMRES whose iterates can
be reconstructed per iteration, and a dense LU wrapper with an explicit
singularity threshold.

FGMRES is right-preconditioned, so reported residuals are true residuals
of the original system and the preconditioner may change from iteration
to iteration (here: inner Krylov solves).  Orthogonalization is modified
Gram-Schmidt with a single reorthogonalization pass whenever the norm
drops by more than 1/sqrt(2).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .errors import NumericalBreakdownError, SingularMatrixError

HAPPY_BREAKDOWN = 1e-14
REORTH_THRESHOLD = 1.0 / np.sqrt(2.0)


def canonical_csr(a) -> sp.csr_matrix:
    """CSR with sorted, duplicate-free columns and no stored zeros."""
    a = sp.csr_matrix(a)
    a.sum_duplicates()
    a.sort_indices()
    a.eliminate_zeros()
    return a


def spmv(a: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {x.shape}")
    return a @ x


def transpose(a: sp.spmatrix) -> sp.csr_matrix:
    return canonical_csr(a.T)


def matmul(a: sp.spmatrix, b: sp.spmatrix) -> sp.csr_matrix:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return canonical_csr(a @ b)


def diag_scale(left, a: sp.spmatrix, right=None) -> sp.csr_matrix:
    """diag(left) @ a @ diag(right); either side may be None."""
    out = a
    if left is not None:
        out = sp.diags(np.asarray(left)) @ out
    if right is not None:
        out = out @ sp.diags(np.asarray(right))
    return canonical_csr(out)


def export_matrix_market(a: sp.spmatrix, path) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(a), symmetry="general")


def direct_small_solve(a, b: np.ndarray, cap: int = 20_000) -> np.ndarray:
    """Dense LU with partial pivoting, for oracles and exact inner solves."""
    if sp.issparse(a):
        a = a.toarray()
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n > cap:
        raise ValueError(f"system of dimension {n} exceeds dense cap {cap}")
    scale = np.abs(a).sum(axis=1).max()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    if np.abs(np.diag(lu)).min() < 1e-14 * max(scale, 1e-300):
        raise SingularMatrixError("pivot below 1e-14 of the matrix scale")
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


@dataclass
class KrylovConfig:
    method: str = "fgmres"
    tol: float = 1e-8
    restart: int = 100
    maxiter: int = 10_000

    def __post_init__(self):
        if self.method not in ("fgmres", "gmres"):
            raise ValueError(f"unknown Krylov method {self.method!r}")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.restart < 1:
            raise ValueError("restart length must be >= 1")


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual: float = 0.0
    converged: bool = True
    residual_history: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def fgmres(
    apply_a: Callable[[np.ndarray], np.ndarray] | sp.spmatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    config: KrylovConfig | None = None,
    apply_m: Callable[[np.ndarray], np.ndarray] | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Right-preconditioned flexible GMRES with restarts.

    ``callback(k, x_k)`` receives the reconstructed iterate after every
    Arnoldi step, which costs one small triangular solve plus a basis
    combination; it exists so invariants of the iterates themselves (not
    just the final solution) can be monitored.
    """
    config = config or KrylovConfig()
    if sp.issparse(apply_a):
        mat = apply_a
        apply_a = lambda v: mat @ v  # noqa: E731
    if apply_m is None:
        apply_m = lambda v: v  # noqa: E731

    t_start = time.perf_counter()
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    norm_b = float(np.linalg.norm(b))
    report = SolveReport()
    if norm_b == 0.0:
        report.final_residual = 0.0
        report.wall_time = time.perf_counter() - t_start
        return np.zeros(n), report

    total_iters = 0
    while True:
        # true residual: governs both convergence and each restart
        r = b - apply_a(x)
        beta = float(np.linalg.norm(r))
        rel = beta / norm_b
        if not np.isfinite(beta):
            raise NumericalBreakdownError("non-finite residual norm")
        if total_iters == 0:
            report.residual_history.append(rel)
        if rel <= config.tol or total_iters >= config.maxiter:
            report.iterations = total_iters
            report.final_residual = rel
            report.converged = rel <= config.tol
            report.wall_time = time.perf_counter() - t_start
            return x, report

        m = min(config.restart, config.maxiter - total_iters)
        v = np.empty((m + 1, n))
        z = np.empty((m, n))
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        v[0] = r / beta

        j = 0
        for j in range(m):
            z[j] = apply_m(v[j])
            w = apply_a(z[j])
            norm_w0 = float(np.linalg.norm(w))
            for i in range(j + 1):
                h[i, j] = float(w @ v[i])
                w -= h[i, j] * v[i]
            norm_w = float(np.linalg.norm(w))
            if norm_w < REORTH_THRESHOLD * norm_w0:
                for i in range(j + 1):
                    corr = float(w @ v[i])
                    h[i, j] += corr
                    w -= corr * v[i]
                norm_w = float(np.linalg.norm(w))
            if not np.isfinite(norm_w):
                raise NumericalBreakdownError("non-finite Arnoldi vector")
            h[j + 1, j] = norm_w

            # Givens update of the j-th column and the residual estimate
            for i in range(j):
                t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = t
            denom = np.hypot(h[j, j], h[j + 1, j])
            cs[j] = h[j, j] / denom
            sn[j] = h[j + 1, j] / denom
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            total_iters += 1
            rel = abs(g[j + 1]) / norm_b
            report.residual_history.append(rel)

            happy = norm_w <= HAPPY_BREAKDOWN * beta
            done = rel <= config.tol or happy or total_iters >= config.maxiter
            if callback is not None or done or j == m - 1:
                y = scipy.linalg.solve_triangular(
                    h[: j + 1, : j + 1], g[: j + 1], check_finite=False
                )
                xk = x + y @ z[: j + 1]
                if callback is not None:
                    callback(total_iters, xk)
            if done:
                break
            v[j + 1] = w / norm_w
        x = xk
        # loop back: the true-residual check at the top decides termination


@dataclass
class BlockOperator:
    """3x3 block matrix with optional (None = zero) CSR blocks."""

    blocks: Sequence[Sequence[sp.spmatrix | None]]
    row_dims: tuple[int, int, int]
    col_dims: tuple[int, int, int]

    def __post_init__(self):
        for i in range(3):
            for j in range(3):
                blk = self.blocks[i][j]
                if blk is None:
                    continue
                if blk.shape != (self.row_dims[i], self.col_dims[j]):
                    raise ValueError(
                        f"block ({i},{j}) has shape {blk.shape}, expected "
                        f"({self.row_dims[i]}, {self.col_dims[j]})"
                    )

    @property
    def shape(self) -> tuple[int, int]:
        return sum(self.row_dims), sum(self.col_dims)

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        offsets = np.cumsum([0, *self.col_dims])
        return [x[offsets[i]:offsets[i + 1]] for i in range(3)]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        parts = self.split(x)
        out = []
        for i in range(3):
            acc = np.zeros(self.row_dims[i])
            for j in range(3):
                blk = self.blocks[i][j]
                if blk is not None:
                    acc += blk @ parts[j]
            out.append(acc)
        return np.concatenate(out)

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x)

    def to_csr(self) -> sp.csr_matrix:
        grid = [
            [
                self.blocks[i][j]
                if self.blocks[i][j] is not None
                else sp.csr_matrix((self.row_dims[i], self.col_dims[j]))
                for j in range(3)
            ]
            for i in range(3)
        ]
        return canonical_csr(sp.bmat(grid, format="csr"))
