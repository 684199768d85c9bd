"""Closed-form Neumann eigenpairs, continuum and piecewise-linear FE.

On ``(0, L)`` the Neumann Laplacian has ``lambda_i = (i pi / L)^2`` with
cosine eigenfunctions. The Galerkin discretization with ``K`` hat functions
has eigenvectors that are the nodal samples of the same cosines, so both
spectra are available in closed form and tensorize over a box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientDataError, RangeError
from .fem import Grid1D, TensorGrid, design_matrix, mass_1d, stiffness_1d


@dataclass(frozen=True)
class EigenSystem1D:
    """Eigenpairs on one interval; ``grid is None`` for the continuum."""

    L: float
    values: np.ndarray
    grid: Optional[Grid1D] = None
    offset: float = 0.0
    norms: np.ndarray = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.values)

    def nodal(self, i: int) -> np.ndarray:
        """Coefficients of the i-th FE eigenfunction in the hat basis."""
        if self.grid is None:
            raise ValueError("continuum eigenfunctions have no nodal coefficients")
        return fe_nodal_vector(self.grid, i)

    def nodal_matrix(self) -> np.ndarray:
        """Columns are the nodal coefficient vectors, shape ``(K+1, count)``."""
        if self.grid is None:
            raise ValueError("continuum eigenfunctions have no nodal coefficients")
        return fe_nodal_matrix(self.grid, self.count)

    def __call__(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grid is None:
            return continuum_eigenfunction(self.L, i, x - self.offset)
        return np.interp(x, self.grid.nodes, self.nodal(i))

    def matrix(self, x) -> np.ndarray:
        """Evaluate all eigenfunctions at ``x``; shape ``(len(x), count)``."""
        x = np.asarray(x, dtype=float).ravel()
        if self.grid is None:
            return continuum_basis(self.L, self.count, x - self.offset)
        S = design_matrix(TensorGrid((self.grid,)), x[:, None])
        return np.asarray(S @ self.nodal_matrix())


def continuum_eigenvalues(L: float, count: int) -> np.ndarray:
    return (np.arange(count) * math.pi / L) ** 2


def continuum_eigenfunction(L: float, i: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if i == 0:
        return np.full_like(x, 1.0 / math.sqrt(L))
    return math.sqrt(2.0 / L) * np.cos(i * math.pi * x / L)


def continuum_basis(L: float, count: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    i = np.arange(count)
    out = math.sqrt(2.0 / L) * np.cos(np.outer(x, i) * math.pi / L)
    out[:, 0] = 1.0 / math.sqrt(L)
    return out


def continuum_eigs_1d(L: float, count: int, offset: float = 0.0) -> EigenSystem1D:
    if not L > 0:
        raise ValueError("L must be positive")
    if count < 1:
        raise RangeError("count must be at least 1")
    return EigenSystem1D(L=float(L), values=continuum_eigenvalues(L, count), offset=offset)


def fe_eigenvalues(grid: Grid1D, count: Optional[int] = None) -> np.ndarray:
    """``(6/h^2)(1 - cos t)/(2 + cos t)`` with ``t = i pi h / L``."""
    count = grid.n_nodes if count is None else count
    t = np.arange(count) * math.pi / grid.K
    return 6.0 / grid.h**2 * (1.0 - np.cos(t)) / (2.0 + np.cos(t))


def fe_normalizers(grid: Grid1D, count: Optional[int] = None) -> np.ndarray:
    """Constants ``c_i`` giving each FE eigenfunction unit L2 norm.

    The generic value ``[L (cos(t)/6 + 1/3)]^{-1/2}`` applies for
    ``0 < i < K``. At ``i = 0`` and ``i = K`` every node contributes
    with the same sign and the squared norm doubles, so the generic value
    is divided by ``sqrt(2)``.
    """
    count = grid.n_nodes if count is None else count
    i = np.arange(count)
    t = i * math.pi / grid.K
    mult = np.where((i == 0) | (i == grid.K), 2.0, 1.0)
    return 1.0 / np.sqrt(mult * grid.L * (np.cos(t) / 6.0 + 1.0 / 3.0))


def fe_nodal_matrix(grid: Grid1D, count: Optional[int] = None) -> np.ndarray:
    count = grid.n_nodes if count is None else count
    k = np.arange(grid.n_nodes)
    i = np.arange(count)
    return np.cos(np.outer(k, i) * math.pi / grid.K) * fe_normalizers(grid, count)


def fe_nodal_vector(grid: Grid1D, i: int) -> np.ndarray:
    if not 0 <= i <= grid.K:
        raise RangeError(f"eigen-index {i} outside [0, {grid.K}]")
    k = np.arange(grid.n_nodes)
    c = fe_normalizers(grid, i + 1)[i]
    return c * np.cos(k * i * math.pi / grid.K)


def fe_eigs_1d(grid: Grid1D, count: Optional[int] = None) -> EigenSystem1D:
    count = grid.n_nodes if count is None else count
    if count > grid.n_nodes:
        raise RangeError(f"requested {count} eigenpairs but the grid has {grid.n_nodes} nodes")
    if count < 1:
        raise RangeError("count must be at least 1")
    return EigenSystem1D(
        L=grid.L,
        values=fe_eigenvalues(grid, count),
        grid=grid,
        offset=grid.offset,
        norms=fe_normalizers(grid, count),
    )


def verify_generalized_eig(grid: Grid1D, i) -> float:
    """``max |G z - lambda M z| / max |z|`` for the closed-form eigenpair(s)."""
    M, G = mass_1d(grid), stiffness_1d(grid)
    idx = np.atleast_1d(i)
    if np.any((idx < 0) | (idx > grid.K)):
        raise RangeError(f"eigen-index outside [0, {grid.K}]")
    Z = fe_nodal_matrix(grid)[:, idx]
    lam = fe_eigenvalues(grid)[idx]
    R = G @ Z - (M @ Z) * lam
    res = np.max(np.abs(R), axis=0) / np.max(np.abs(Z), axis=0)
    return float(res[0]) if np.ndim(i) == 0 else res


def fe_gram(grid: Grid1D) -> np.ndarray:
    """``Z^T M Z`` for the full set of FE eigenvectors."""
    Z = fe_nodal_matrix(grid)
    return Z.T @ (mass_1d(grid) @ Z)


@dataclass(frozen=True)
class EigenSystemTensor:
    """Product eigenpairs on a box, sorted by ascending eigenvalue."""

    factors: tuple
    multi_indices: np.ndarray
    values: np.ndarray

    @property
    def D(self) -> int:
        return len(self.factors)

    @property
    def count(self) -> int:
        return len(self.values)

    def __call__(self, j: int, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.D)
        out = np.ones(pts.shape[0])
        for d, fac in enumerate(self.factors):
            out *= fac(int(self.multi_indices[j, d]), pts[:, d])
        return out

    def matrix(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.D)
        out = np.ones((pts.shape[0], self.count))
        for d, fac in enumerate(self.factors):
            out *= fac.matrix(pts[:, d])[:, self.multi_indices[:, d]]
        return out

    def nodal_matrix(self) -> np.ndarray:
        """Nodal coefficient vectors of the FE product eigenfunctions."""
        cols = None
        for d, fac in enumerate(self.factors):
            Zd = fac.nodal_matrix()[:, self.multi_indices[:, d]]
            if cols is None:
                cols = Zd
            else:
                cols = (cols[:, None, :] * Zd[None, :, :]).reshape(-1, self.count)
        return cols


def enumerate_multi_indices(shape: Sequence[int], values_1d: Sequence[np.ndarray]):
    """All multi-indices in ``shape`` with summed eigenvalues, ascending.

    Ties are broken lexicographically on the multi-index.
    """
    idx = np.array(list(itertools.product(*[range(n) for n in shape])), dtype=np.int64)
    idx = idx.reshape(-1, len(shape))
    lam = np.zeros(idx.shape[0])
    for d, vals in enumerate(values_1d):
        lam += np.asarray(vals)[idx[:, d]]
    keys = [idx[:, d] for d in reversed(range(idx.shape[1]))] + [lam]
    order = np.lexsort(keys)
    return idx[order], lam[order]


def tensor_eigs(tg: TensorGrid, count: Optional[int] = None) -> EigenSystemTensor:
    count = tg.n_h if count is None else count
    if count > tg.n_h:
        raise RangeError(f"requested {count} eigenpairs but the grid has {tg.n_h} nodes")
    factors = tuple(fe_eigs_1d(g) for g in tg.grids)
    idx, lam = enumerate_multi_indices(tg.shape, [f.values for f in factors])
    return EigenSystemTensor(factors=factors, multi_indices=idx[:count], values=lam[:count])


def continuum_tensor_eigs(lengths: Sequence[float], per_dim: int, count: Optional[int] = None):
    factors = tuple(continuum_eigs_1d(L, per_dim) for L in lengths)
    shape = (per_dim,) * len(factors)
    idx, lam = enumerate_multi_indices(shape, [f.values for f in factors])
    count = len(lam) if count is None else count
    return EigenSystemTensor(factors=factors, multi_indices=idx[:count], values=lam[:count])


@dataclass
class SpectralErrorTable:
    h: np.ndarray
    eigval_relerr: np.ndarray
    eigfun_inferr: np.ndarray
    slope_running: np.ndarray
    eigval_slope: float
    eigfun_slope: float
    zero_mode_error: float

    def rows(self):
        for k in range(len(self.h)):
            yield {
                "h": self.h[k],
                "max_eigval_relerr": self.eigval_relerr[k],
                "max_eigfun_inferr": self.eigfun_inferr[k],
                "slope_running": self.slope_running[k],
            }


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def eval_grid_1d(grid: Grid1D, per_cell: int = 8) -> np.ndarray:
    return np.linspace(grid.offset, grid.upper, per_cell * grid.K + 1)


def spectral_error_report(
    L: float, h_list: Sequence[float], i_max: int, per_cell: int = 8
) -> SpectralErrorTable:
    """Eigenvalue and sup-norm eigenfunction errors across mesh levels.

    For each ``h`` records ``max_i |lam_h,i - lam_i| / lam_i^2`` and
    ``max_i ||psi_h,i - psi_i||_inf / lam_i`` over ``1 <= i <= i_max``.
    ``slope_running`` is the log-log slope of the eigenvalue column fitted
    on all levels up to and including the current one.
    """
    h_arr = np.asarray(sorted(h_list, reverse=True), dtype=float)
    if len(h_arr) < 3:
        raise InsufficientDataError("need at least three mesh levels for a slope fit")
    ev_err, ef_err, zero_err = [], [], 0.0
    i = np.arange(1, i_max + 1)
    for h in h_arr:
        K = int(round(L / h))
        if abs(K * h - L) > 1e-9 * L:
            raise ValueError(f"h={h} does not divide L={L}")
        if i_max > K:
            raise RangeError(f"i_max={i_max} exceeds K={K}")
        grid = Grid1D(L, K)
        lam_h = fe_eigenvalues(grid, i_max + 1)
        lam = continuum_eigenvalues(L, i_max + 1)
        ev_err.append(np.max(np.abs(lam_h[i] - lam[i]) / lam[i] ** 2))
        x = eval_grid_1d(grid, per_cell)
        fe = fe_eigs_1d(grid, i_max + 1).matrix(x)
        ex = continuum_basis(L, i_max + 1, x)
        diff = np.max(np.abs(fe - ex), axis=0)
        zero_err = max(zero_err, float(diff[0]))
        ef_err.append(np.max(diff[i] / lam[i]))
    ev_err, ef_err = np.array(ev_err), np.array(ef_err)
    running = np.full(len(h_arr), np.nan)
    for k in range(1, len(h_arr)):
        running[k] = loglog_slope(h_arr[: k + 1], ev_err[: k + 1])
    return SpectralErrorTable(
        h=h_arr,
        eigval_relerr=ev_err,
        eigfun_inferr=ef_err,
        slope_running=running,
        eigval_slope=loglog_slope(h_arr, ev_err),
        eigfun_slope=loglog_slope(h_arr, ef_err),
        zero_mode_error=zero_err,
    )
