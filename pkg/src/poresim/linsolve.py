"""Sparse symmetric positive definite storage and Jacobi-preconditioned CG."""

from __future__ import annotations

import logging
import math
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, NonFiniteEncountered, SolverDivergence, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


class SparseSymmetricMatrix:
    """Row-compressed storage of a symmetric matrix with the full pattern stored.

    Construction rejects asymmetric values or a missing / non-positive
    diagonal, so a solver never meets them mid-iteration.
    """

    def __init__(self, n: int, indptr, indices, data, check: bool = True):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        if self.indptr.shape != (self.n + 1,) or self.indptr[-1] != len(self.indices):
            raise ValidationError("malformed row offsets")
        if len(self.data) != len(self.indices):
            raise ValidationError("indices and values differ in length")
        self._rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        # reduceat misreads empty rows, so matvec only reduces the non-empty ones
        self._full = self.indptr[:-1] < self.indptr[1:]
        self._starts = self.indptr[:-1][self._full]
        self._dense_rows = bool(self._full.all())
        self._diag = None
        if check:
            self._check()

    @classmethod
    def from_coo(cls, n, rows, cols, vals, check: bool = True) -> "SparseSymmetricMatrix":
        """Build from triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if len(rows) and (rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= n):
            raise DimensionMismatch("triplet index out of range")
        key = rows * n + cols
        order = np.argsort(key, kind="stable")
        key, vals = key[order], vals[order]
        uniq, start = np.unique(key, return_index=True)
        summed = np.add.reduceat(vals, start) if len(vals) else vals
        r, c = np.divmod(uniq, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
        return cls(n, indptr, c, summed, check=check)

    @classmethod
    def from_dense(cls, a) -> "SparseSymmetricMatrix":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls.from_coo(a.shape[0], r, c, a[r, c])

    def _check(self):
        n = self.n
        if np.any(~np.isfinite(self.data)):
            raise ValidationError("non-finite matrix entry")
        k1 = self._rows * n + self.indices
        k2 = self.indices * n + self._rows
        o1, o2 = np.argsort(k1), np.argsort(k2)
        if not (np.array_equal(k1[o1], k2[o2]) and np.array_equal(self.data[o1], self.data[o2])):
            raise ValidationError("matrix is not symmetric")
        d = self.diagonal()
        if np.any(~(d > 0)):
            raise ValidationError("diagonal entries must be present and positive")

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def diagonal(self) -> np.ndarray:
        if self._diag is None:
            d = np.zeros(self.n)
            on = self._rows == self.indices
            d[self._rows[on]] = self.data[on]
            d.flags.writeable = False
            self._diag = d
        return self._diag

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatch(f"vector of length {x.shape} for a {self.n}x{self.n} matrix")
        if self.n == 0:
            return np.zeros(0)
        # reduceat sums each row left to right: a fixed, reproducible order
        prod = self.data * x[self.indices]
        if self._dense_rows:
            return np.add.reduceat(prod, self._starts)
        out = np.zeros(self.n)
        if len(self._starts):
            out[self._full] = np.add.reduceat(prod, self._starts)
        return out

    __matmul__ = matvec

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self._rows, self.indices] = self.data
        return a

    def row_sums(self) -> np.ndarray:
        return self.matvec(np.ones(self.n))


def matvec(a: SparseSymmetricMatrix, x) -> np.ndarray:
    return a.matvec(x)


class SolveResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def default_max_iter(n: int) -> int:
    return int(10 * math.sqrt(n) + 100)


def pcg_solve(a: SparseSymmetricMatrix, b, tol: float = DEFAULT_TOL, max_iter: int | None = None,
              x0=None, jacobi: bool = True) -> SolveResult:
    """Solve ``a @ x = b`` by conjugate gradient, Jacobi preconditioned by default.

    Stops once ``||b - a x|| / ||b|| <= tol``. The reported residual is the
    true residual recomputed from ``x``, not the recursive estimate.
    """
    b = np.asarray(b, dtype=float)
    n = a.n
    if b.shape != (n,):
        raise DimensionMismatch(f"right-hand side of length {b.shape}, matrix is {n}x{n}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = default_max_iter(n)
    bnorm = math.sqrt(float(b @ b))
    if not math.isfinite(bnorm):
        raise NonFiniteEncountered("right-hand side is not finite")
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), 0, 0.0)

    inv_diag = 1.0 / a.diagonal() if jacobi else np.ones(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - a.matvec(x)
    target = tol * bnorm
    it = 0
    # one restart from the true residual guards against recursive-residual drift
    for _attempt in range(2):
        z = inv_diag * r
        p = z.copy()
        rz = float(r @ z)
        rnorm = math.sqrt(float(r @ r))
        while rnorm > target and it < max_iter:
            q = a.matvec(p)
            pq = float(p @ q)
            if not math.isfinite(pq):
                raise NonFiniteEncountered(f"non-finite curvature at iteration {it}")
            if pq <= 0.0:
                raise SolverDivergence(f"matrix is not positive definite (p.Ap = {pq:g})")
            alpha = rz / pq
            x += alpha * p
            r -= alpha * q
            z = inv_diag * r
            rz_new = float(r @ z)
            p *= rz_new / rz
            p += z
            rz = rz_new
            rnorm = math.sqrt(float(r @ r))
            it += 1
            if not math.isfinite(rnorm):
                raise NonFiniteEncountered(f"non-finite residual at iteration {it}")
        r = b - a.matvec(x)
        true_res = math.sqrt(float(r @ r))
        if true_res <= target or it >= max_iter:
            break
    rel = true_res / bnorm
    if rel > tol:
        raise SolverDivergence(
            f"CG stopped at relative residual {rel:.3e} > {tol:.1e} after {it} iterations")
    logger.debug("pcg: n=%d iterations=%d residual=%.3e", n, it, rel)
    return SolveResult(x, it, rel)
