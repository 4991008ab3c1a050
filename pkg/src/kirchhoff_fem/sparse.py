"""Compressed-row sparse matrices and Krylov/eigen solvers.

Storage and matrix-vector products go through ``scipy.sparse``; the
preconditioned conjugate gradient and the inverse power iteration are
implemented here so that their stopping rules and reports are under our
control.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""


class SparseMatrix:
    """Square or rectangular CSR matrix with canonical (sorted, unique) columns."""

    __slots__ = ("_csr",)

    def __init__(self, nrows, ncols, row_ptr, col_idx, values):
        csr = sp.csr_matrix(
            (np.asarray(values, dtype=float), np.asarray(col_idx), np.asarray(row_ptr)),
            shape=(nrows, ncols),
        )
        self._csr = _canonical(csr)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        obj = cls.__new__(cls)
        obj._csr = _canonical(sp.csr_matrix(mat, dtype=float))
        return obj

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape) -> "SparseMatrix":
        """Build from COO triplets; duplicate entries are summed."""
        coo = sp.coo_matrix((np.asarray(vals, dtype=float), (rows, cols)), shape=shape)
        return cls.from_scipy(coo.tocsr())

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=float)))

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def nrows(self) -> int:
        return self._csr.shape[0]

    @property
    def ncols(self) -> int:
        return self._csr.shape[1]

    @property
    def row_ptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_idx(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return int(self._csr.nnz)

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def __matmul__(self, x):
        if isinstance(x, SparseMatrix):
            return SparseMatrix.from_scipy(self._csr @ x._csr)
        return self._csr @ x

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr + other._csr)

    def __mul__(self, scalar: float) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr * float(scalar))

    __rmul__ = __mul__

    def quadratic_form(self, x: np.ndarray, y: np.ndarray | None = None) -> float:
        """Return ``x^T A y`` (``y`` defaults to ``x``)."""
        y = x if y is None else y
        return float(x @ (self._csr @ y))

    def submatrix(self, rows: np.ndarray, cols: np.ndarray) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr[rows][:, cols])

    def is_symmetric(self, rtol: float = 1e-14) -> bool:
        if self.nrows != self.ncols:
            return False
        diff = abs(self._csr - self._csr.T)
        scale = abs(self._csr).max() if self.nnz else 0.0
        return diff.nnz == 0 or diff.max() <= rtol * scale

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def _canonical(csr: sp.csr_matrix) -> sp.csr_matrix:
    csr = csr.copy()
    csr.sum_duplicates()
    csr.sort_indices()
    return csr


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual_norm: float
    converged: bool


def _as_operator(A):
    if isinstance(A, SparseMatrix):
        return A
    if sp.issparse(A):
        return SparseMatrix.from_scipy(A)
    return SparseMatrix.from_dense(A)


def cg_solve(
    A,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    precond: str | None = "jacobi",
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradient for symmetric positive definite ``A``.

    Stops once ``||b - A x|| <= tol * ||b||``. Failure to converge within
    ``max_iter`` iterations is reported through ``SolveReport.converged``
    rather than raised; a dimension mismatch raises ``ValueError``.
    """
    A = _as_operator(A)
    b = np.asarray(b, dtype=float)
    n = A.nrows
    if A.ncols != n or b.shape != (n,):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if x0 is not None and np.shape(x0) != (n,):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, x0 {np.shape(x0)}")
    if max_iter is None:
        max_iter = max(10 * n, 100)

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)

    if precond == "jacobi":
        diag = A.diagonal()
        if np.any(diag <= 0.0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv_diag = 1.0 / diag
    elif precond in (None, "none"):
        inv_diag = None
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A.matvec(x)
    target = tol * bnorm
    rnorm = np.linalg.norm(r)
    it = 0
    if rnorm > target:
        z = r * inv_diag if inv_diag is not None else r
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            Ap = A.matvec(p)
            pAp = p @ Ap
            if pAp <= 0.0:
                logger.warning("CG breakdown: p^T A p = %g (matrix not SPD?)", pAp)
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                # confirm against the true residual; recurrence drift can fake convergence
                r = b - A.matvec(x)
                rnorm = np.linalg.norm(r)
                if rnorm <= target:
                    break
            z = r * inv_diag if inv_diag is not None else r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new

    rel = rnorm / bnorm
    converged = bool(rel <= tol)
    if not converged:
        logger.warning("CG did not converge: %d iterations, relative residual %.3e", it, rel)
    return x, SolveReport(it, float(rel), converged)


@dataclass(frozen=True)
class EigenResult:
    eigenvalue: float
    eigenvector: np.ndarray
    iterations: int


def inverse_power_iteration(A, M, tol: float = 1e-10, max_iter: int = 1000) -> EigenResult:
    """Smallest eigenpair of the pencil ``A x = lambda M x`` by inverse iteration.

    Each step solves ``A y = M x`` with CG and normalizes ``y`` in the
    ``M``-norm; the Rayleigh quotient is the eigenvalue estimate. Stops when
    consecutive estimates agree to ``tol`` relative.
    """
    A = _as_operator(A)
    M = _as_operator(M)
    n = A.nrows
    if A.shape != (n, n) or M.shape != (n, n):
        raise ValueError(f"dimension mismatch: A {A.shape}, M {M.shape}")

    inner_tol = max(min(1e-10, 1e-2 * tol), 1e-13)
    # the ground state of a Dirichlet Laplacian is positive, so a positive
    # start vector always has a component along it
    x = np.ones(n)
    x /= np.sqrt(M.quadratic_form(x))
    lam = A.quadratic_form(x)
    for it in range(1, max_iter + 1):
        y, report = cg_solve(A, M.matvec(x), tol=inner_tol, x0=x / lam)
        if not report.converged:
            raise SolverError(f"inner CG solve failed at iteration {it}")
        x = y / np.sqrt(M.quadratic_form(y))
        lam_new = A.quadratic_form(x)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return EigenResult(lam_new, x, it)
        lam = lam_new
    raise SolverError(f"inverse power iteration did not converge in {max_iter} iterations")


def smallest_generalized_eigenvalue(A, M, tol: float = 1e-10) -> float:
    return inverse_power_iteration(A, M, tol=tol).eigenvalue
