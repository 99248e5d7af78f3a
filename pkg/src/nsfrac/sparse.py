"""CSR matrices with frozen sparsity and Krylov solvers.

The matrix class owns its (indptr, indices, data) arrays and enforces
in-pattern algebra: the pattern is fixed after construction, axpy between
matrices requires identical patterns (never a silent union), and values
may be rewritten in place. Matrix-vector products are delegated to the
scipy CSR kernel through a zero-copy view.

Solvers: BiCGStab, CG and MINRES with optional Jacobi preconditioning.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "CsrMatrix",
    "csr_from_coo_pattern",
    "PatternMismatchError",
    "KrylovError",
    "BreakdownError",
    "KrylovConfig",
    "SolveResult",
    "solve",
    "lump",
    "subtract_mean",
]


class PatternMismatchError(ValueError):
    """Raised when in-pattern algebra meets a different sparsity pattern."""


class KrylovError(RuntimeError):
    """Iterative solve failure; carries the residual history."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class BreakdownError(KrylovError):
    """BiCGStab scalar breakdown (rho or omega vanished)."""


class CsrMatrix:
    """Compressed sparse row matrix with an immutable pattern."""

    __slots__ = ("indptr", "indices", "data", "shape", "_view", "_diag_pos")

    def __init__(self, indptr, indices, data, shape):
        view = sp.csr_matrix((np.asarray(data, dtype=float),
                              np.asarray(indices, dtype=np.int64),
                              np.asarray(indptr, dtype=np.int64)),
                             shape=shape, copy=False)
        # bind to the view's buffers so in-place value edits are shared
        self._view = view
        self.indptr = view.indptr
        self.indices = view.indices
        self.data = view.data
        self.shape = tuple(shape)
        self._diag_pos = None
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    # -- construction -------------------------------------------------

    @classmethod
    def from_scipy(cls, mat):
        m = sp.csr_matrix(mat)
        m.sort_indices()
        return cls(m.indptr.copy(), m.indices.copy(), m.data.copy(), m.shape)

    @classmethod
    def from_dense(cls, arr):
        return cls.from_scipy(sp.csr_matrix(np.asarray(arr, dtype=float)))

    def copy(self, share_pattern=True):
        """New matrix with copied values; pattern arrays shared by default."""
        if share_pattern:
            out = object.__new__(CsrMatrix)
            view = sp.csr_matrix((self.data.copy(), self.indices, self.indptr),
                                 shape=self.shape, copy=False)
            out._view = view
            out.indptr = self.indptr
            out.indices = self.indices
            out.data = view.data
            out.shape = self.shape
            out._diag_pos = self._diag_pos
            return out
        return CsrMatrix(self.indptr.copy(), self.indices.copy(),
                         self.data.copy(), self.shape)

    # -- queries ------------------------------------------------------

    @property
    def nnz(self):
        return self.data.size

    def pattern_equals(self, other):
        if self.indices is other.indices and self.indptr is other.indptr:
            return True
        return (self.shape == other.shape
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def row(self, i):
        """Column indices and values of row i."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def diagonal(self):
        return self._view.diagonal()

    def toarray(self):
        return self._view.toarray()

    # -- products -----------------------------------------------------

    def matvec(self, x):
        x = np.asarray(x)
        if x.shape != (self.shape[1],):
            raise ValueError(f"dimension mismatch: matrix {self.shape}, vector {x.shape}")
        return self._view @ x

    def rmatvec(self, x):
        """Transpose matrix-vector product A^T x."""
        x = np.asarray(x)
        if x.shape != (self.shape[0],):
            raise ValueError(f"dimension mismatch: matrix {self.shape}, vector {x.shape}")
        return self._view.T @ x

    def __matmul__(self, x):
        return self.matvec(x)

    # -- in-pattern algebra --------------------------------------------

    def set_zero(self):
        self.data[:] = 0.0

    def scale(self, alpha):
        self.data *= alpha

    def axpy(self, alpha, other):
        """self += alpha * other; patterns must be identical."""
        if not self.pattern_equals(other):
            raise PatternMismatchError(
                "axpy requires identical sparsity patterns (no silent union)")
        nnz_before = self.nnz
        self.data += alpha * other.data
        assert self.nnz == nnz_before

    def lump(self):
        """Row-sum lumping, returned as a vector."""
        if self.shape[0] != self.shape[1]:
            raise ValueError("lumping requires a square matrix")
        return self._view @ np.ones(self.shape[1])

    def _diag_positions(self):
        if self._diag_pos is None:
            n = self.shape[0]
            pos = np.empty(n, dtype=np.int64)
            for i in range(n):
                lo, hi = self.indptr[i], self.indptr[i + 1]
                j = np.searchsorted(self.indices[lo:hi], i)
                if j == hi - lo or self.indices[lo + j] != i:
                    raise ValueError(f"row {i} has no diagonal entry in the pattern")
                pos[i] = lo + j
            self._diag_pos = pos
        return self._diag_pos

    def zero_rows_unit_diagonal(self, rows):
        """Zero the given rows and put 1 on their diagonal (row-only bc)."""
        dpos = self._diag_positions()
        for i in rows:
            self.data[self.indptr[i]:self.indptr[i + 1]] = 0.0
        self.data[dpos[rows]] = 1.0

    # -- io -------------------------------------------------------------

    def to_matrix_market(self, path):
        scipy.io.mmwrite(path, self._view)

    def __repr__(self):
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


def csr_from_coo_pattern(rows, cols, shape):
    """Freeze the pattern of a COO entry list.

    Returns ``(matrix, scatter)`` where the matrix has zero values and
    ``scatter[k]`` is the position in ``matrix.data`` receiving COO entry
    k (duplicates accumulate onto the same slot).
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((cols, rows))
    r, c = rows[order], cols[order]
    first = np.ones(len(r), dtype=bool)
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    urows, ucols = r[first], c[first]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, urows + 1, 1)
    np.cumsum(indptr, out=indptr)
    scatter = np.empty(len(rows), dtype=np.int64)
    scatter[order] = np.cumsum(first) - 1
    mat = CsrMatrix(indptr, ucols, np.zeros(first.sum()), shape)
    return mat, scatter


# ---------------------------------------------------------------------------
# vector utilities

def lump(matrix):
    """Row-sum lumping of a square CsrMatrix."""
    return matrix.lump()


def subtract_mean(x, weights):
    """Remove the weighted mean of x (used with lumped-mass weights)."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not total > 0:
        raise ValueError("weights must have positive sum")
    return x - np.dot(weights, x) / total


# ---------------------------------------------------------------------------
# Krylov solvers

@dataclass
class KrylovConfig:
    """Iterative solver selection and stopping parameters."""

    method: str = "bicgstab"
    rtol: float = 1e-8
    atol: float = 1e-12
    maxiter: int = 500
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if self.method not in ("bicgstab", "cg", "minres"):
            raise ValueError(f"unknown Krylov method '{self.method}'")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner '{self.preconditioner}'")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.maxiter < 1:
            raise ValueError("maxiter must be at least 1")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float
    residuals: list = field(default_factory=list)


def _check_symmetry(A):
    rng = np.random.default_rng(1234)
    u = rng.standard_normal(A.shape[0])
    v = rng.standard_normal(A.shape[0])
    Au, Av = A.matvec(u), A.matvec(v)
    scale = max(np.linalg.norm(Au) * np.linalg.norm(v),
                np.linalg.norm(Av) * np.linalg.norm(u), 1e-30)
    if abs(np.dot(v, Au) - np.dot(u, Av)) > 1e-10 * scale:
        raise ValueError("matrix failed the random-vector symmetry probe")


def solve(A, b, x0=None, cfg=None):
    """Solve A x = b iteratively.

    Stops when ||b - A x|| <= max(rtol * ||b - A x0||, atol); raises
    ``KrylovError`` (with the residual history) if maxiter is exhausted
    and ``BreakdownError`` on BiCGStab scalar breakdown.
    """
    cfg = cfg or KrylovConfig()
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError("solve requires a square matrix")
    if b.shape != (A.shape[0],):
        raise ValueError("right-hand side has wrong length")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)

    if cfg.preconditioner == "jacobi":
        d = A.diagonal()
        if np.any(d == 0.0):
            raise ValueError("Jacobi preconditioner hit a zero diagonal entry")
        minv = 1.0 / d
    else:
        minv = None

    r0 = b - A.matvec(x)
    res0 = np.linalg.norm(r0)
    threshold = max(cfg.rtol * res0, cfg.atol)
    if res0 <= threshold:
        return SolveResult(x, 0, res0, [res0])

    if cfg.method in ("cg", "minres") and __debug__:
        _check_symmetry(A)

    if cfg.method == "bicgstab":
        return _bicgstab(A, b, x, r0, minv, threshold, cfg.maxiter)
    if cfg.method == "cg":
        return _cg(A, b, x, r0, minv, threshold, cfg.maxiter)
    return _minres(A, b, x, r0, minv, threshold, cfg.maxiter)


def _apply_pre(minv, r):
    return r if minv is None else minv * r


def _bicgstab(A, b, x, r, minv, threshold, maxiter):
    history = []
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for it in range(1, maxiter + 1):
        rho_new = np.dot(r_hat, r)
        if abs(rho_new) < 1e-300:
            raise BreakdownError(f"BiCGStab breakdown (rho ~ 0) at iteration {it}",
                                 history)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = _apply_pre(minv, p)
        v = A.matvec(p_hat)
        denom = np.dot(r_hat, v)
        if abs(denom) < 1e-300:
            raise BreakdownError(f"BiCGStab breakdown (r_hat.v ~ 0) at iteration {it}",
                                 history)
        alpha = rho / denom
        s = r - alpha * v
        res = np.linalg.norm(s)
        if res <= threshold:
            x += alpha * p_hat
            history.append(res)
            return SolveResult(x, it, res, history)
        s_hat = _apply_pre(minv, s)
        t = A.matvec(s_hat)
        tt = np.dot(t, t)
        if tt == 0.0:
            raise BreakdownError(f"BiCGStab breakdown (t = 0) at iteration {it}",
                                 history)
        omega = np.dot(t, s) / tt
        if omega == 0.0:
            raise BreakdownError(f"BiCGStab breakdown (omega = 0) at iteration {it}",
                                 history)
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        res = np.linalg.norm(r)
        history.append(res)
        if res <= threshold:
            return SolveResult(x, it, res, history)
    raise KrylovError(
        f"BiCGStab did not converge in {maxiter} iterations "
        f"(residual {history[-1]:.3e}, target {threshold:.3e})", history)


def _cg(A, b, x, r, minv, threshold, maxiter):
    history = []
    z = _apply_pre(minv, r)
    p = z.copy()
    rz = np.dot(r, z)
    for it in range(1, maxiter + 1):
        Ap = A.matvec(p)
        pAp = np.dot(p, Ap)
        if pAp <= 0.0:
            raise KrylovError(
                f"CG hit a nonpositive curvature direction at iteration {it} "
                "(matrix not SPD?)", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        history.append(res)
        if res <= threshold:
            return SolveResult(x, it, res, history)
        z = _apply_pre(minv, r)
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise KrylovError(
        f"CG did not converge in {maxiter} iterations "
        f"(residual {history[-1]:.3e}, target {threshold:.3e})", history)


def _minres(A, b, x, r1, minv, threshold, maxiter):
    # Lanczos-based MINRES (Paige & Saunders); works on symmetric systems,
    # including singular ones with a compatible right-hand side. The true
    # residual is checked every iteration.
    history = []
    y = _apply_pre(minv, r1)
    beta1 = np.dot(r1, y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    if beta1 == 0.0:
        return SolveResult(x, 0, 0.0, [0.0])
    beta1 = sqrt(beta1)

    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1
    for it in range(1, maxiter + 1):
        v = y / beta
        y = A.matvec(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = np.dot(v, y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = _apply_pre(minv, r2)
        oldb, beta = beta, np.dot(r2, y)
        if beta < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(sqrt(gbar * gbar + beta * beta), 1e-300)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        res = np.linalg.norm(b - A.matvec(x))
        history.append(res)
        if res <= threshold:
            return SolveResult(x, it, res, history)
    raise KrylovError(
        f"MINRES did not converge in {maxiter} iterations "
        f"(residual {history[-1]:.3e}, target {threshold:.3e})", history)
