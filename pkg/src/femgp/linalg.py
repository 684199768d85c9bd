"""Banded Cholesky factorization of sparse SPD matrices.

The matrix is symmetrically permuted with reverse Cuthill-McKee (kept only
when it narrows the band of the given ordering), stored in
LAPACK lower band form and factored with ``scipy.linalg.cholesky_banded``.
Tensor-grid precision matrices are banded under this ordering, so the cost
is ``O(n b^2)`` for bandwidth ``b``.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import ConditioningError


class SparseCholesky:
    """``P A P^T = L L^T`` with ``P`` a bandwidth-reducing permutation."""

    def __init__(self, A, reorder: bool = True):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        if n == 0:
            self.perm = np.zeros(0, dtype=np.int64)
            self.bandwidth = 0
            self.band = np.zeros((1, 0))
            return
        perm = np.arange(n)
        if reorder and n > 2:
            rcm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
            # lexicographic tensor orderings are often already narrower
            if _bandwidth(A, rcm) < _bandwidth(A, perm):
                perm = rcm
        self.perm = perm
        self.iperm = np.empty_like(perm)
        self.iperm[perm] = np.arange(n)
        Ap = A[perm][:, perm].tocoo()
        lower = Ap.row >= Ap.col
        rows, cols, vals = Ap.row[lower], Ap.col[lower], Ap.data[lower]
        b = int(np.max(rows - cols)) if rows.size else 0
        band = np.zeros((b + 1, n))
        np.add.at(band, (rows - cols, cols), vals)
        self.bandwidth = b
        try:
            self.band = sla.cholesky_banded(band, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            pivot = _failed_pivot(str(exc))
            raise ConditioningError(
                f"Cholesky factorization failed: {exc}", pivot=pivot
            ) from exc
        except ValueError as exc:
            raise ConditioningError(f"Cholesky factorization failed: {exc}") from exc

    @property
    def smallest_pivot(self) -> float:
        return float(np.min(self.band[0])) if self.n else float("nan")

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.band[0])))

    def solve(self, b):
        """Solve ``A x = b`` for a vector or a matrix of right-hand sides."""
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return b.copy()
        x = sla.cho_solve_banded((self.band, True), b[self.perm], check_finite=False)
        return x[self.iperm]

    def solve_lt(self, z):
        """Return ``P^T L^{-T} z``; maps standard normals to ``N(0, A^{-1})``."""
        z = np.asarray(z, dtype=float)
        if self.n == 0:
            return z.copy()
        rhs = z.reshape(self.n, -1)
        y, info = lapack.dtbtrs(self.band, rhs, uplo="L", trans="T")
        if info != 0:
            raise ConditioningError(f"triangular band solve failed (info={info})")
        return y[self.iperm].reshape(z.shape)

    def dense_factor(self) -> np.ndarray:
        """The triangular factor ``L`` as a dense array (small problems only)."""
        L = np.zeros((self.n, self.n))
        for k in range(self.bandwidth + 1):
            idx = np.arange(self.n - k)
            L[idx + k, idx] = self.band[k, : self.n - k]
        return L


def _bandwidth(A, perm) -> int:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    coo = A.tocoo()
    return int(np.max(np.abs(inv[coo.row] - inv[coo.col]))) if coo.nnz else 0


def _failed_pivot(message: str):
    digits = "".join(c if c.isdigit() else " " for c in message).split()
    return int(digits[0]) if digits else None
