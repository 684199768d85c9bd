"""Piecewise-linear finite elements on intervals and tensor-product boxes.

Matrices are ``scipy.sparse.csr_matrix`` objects with both triangles stored.
Nodes of a tensor grid are ordered lexicographically in the multi-index
``(i_1, ..., i_D)`` with the last dimension varying fastest, which is the
ordering produced by ``scipy.sparse.kron``.
"""
from __future__ import annotations

import io
import itertools
import os
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, DomainError, ParameterError, ResourceError

MAX_NODES = 5_000_000


@dataclass(frozen=True)
class Grid1D:
    """Uniform partition of ``[offset, offset + L]`` into ``K`` cells."""

    L: float
    K: int
    offset: float = 0.0

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"interval length must be positive, got {self.L}")
        if int(self.K) != self.K or self.K < 1:
            raise ParameterError(f"cell count must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def h(self) -> float:
        return self.L / self.K

    @property
    def n_nodes(self) -> int:
        return self.K + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.offset + self.h * np.arange(self.K + 1)

    @property
    def upper(self) -> float:
        return self.offset + self.L


@dataclass(frozen=True)
class TensorGrid:
    grids: tuple
    max_ratio: float = 2.0

    def __post_init__(self):
        grids = tuple(self.grids)
        if not grids:
            raise ParameterError("a tensor grid needs at least one factor")
        object.__setattr__(self, "grids", grids)
        hs = [g.h for g in grids]
        if max(hs) / min(hs) > self.max_ratio * (1 + 1e-12):
            raise ParameterError(
                f"mesh sizes {hs} violate quasi-uniformity (ratio cap {self.max_ratio})"
            )
        if self.n_h > MAX_NODES:
            raise ResourceError(f"{self.n_h} nodes exceed the cap of {MAX_NODES}")

    @classmethod
    def uniform(cls, lengths: Sequence[float], K, offsets=None, **kw) -> "TensorGrid":
        lengths = list(np.atleast_1d(lengths).astype(float))
        Ks = list(np.broadcast_to(np.atleast_1d(K), (len(lengths),)))
        offs = [0.0] * len(lengths) if offsets is None else list(np.atleast_1d(offsets))
        return cls(tuple(Grid1D(L, int(k), o) for L, k, o in zip(lengths, Ks, offs)), **kw)

    @property
    def D(self) -> int:
        return len(self.grids)

    @property
    def shape(self) -> tuple:
        return tuple(g.n_nodes for g in self.grids)

    @property
    def n_h(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        return max(g.h for g in self.grids)

    @property
    def lower(self) -> np.ndarray:
        return np.array([g.offset for g in self.grids])

    @property
    def upper(self) -> np.ndarray:
        return np.array([g.upper for g in self.grids])

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(n_h, D)``, in assembly order."""
        mesh = np.meshgrid(*[g.nodes for g in self.grids], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def mass_1d(grid: Grid1D) -> sp.csr_matrix:
    """Consistent mass matrix of the hat basis."""
    h, n = grid.h, grid.n_nodes
    diag = np.full(n, 2.0 * h / 3.0)
    diag[0] = diag[-1] = h / 3.0
    off = np.full(n - 1, h / 6.0)
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def stiffness_1d(grid: Grid1D) -> sp.csr_matrix:
    """Neumann stiffness matrix of the hat basis."""
    h, n = grid.h, grid.n_nodes
    diag = np.full(n, 2.0 / h)
    diag[0] = diag[-1] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def lumped_mass(M) -> sp.csr_matrix:
    """Diagonal matrix of the row sums of ``M``."""
    rows = np.asarray(M.sum(axis=1)).ravel()
    if np.any(rows <= 0):
        bad = int(np.flatnonzero(rows <= 0)[0])
        raise AssemblyError(f"row {bad} of the mass matrix has non-positive sum {rows[bad]}")
    return sp.diags(rows, 0, format="csr")


def _kron_all(mats):
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats).tocsr()


def tensor_mass_stiffness(tg: TensorGrid, lumped: bool = False):
    """Mass and stiffness matrices of the tensor-product hat basis.

    ``M = M_1 x ... x M_D`` (lumped factors if ``lumped``) and
    ``G = sum_d M_1 x ... x G_d x ... x M_D`` with consistent mass factors.
    For ``D = 1`` the one-dimensional matrices are returned unchanged.
    """
    masses = [mass_1d(g) for g in tg.grids]
    stiffs = [stiffness_1d(g) for g in tg.grids]
    if tg.D == 1:
        M = lumped_mass(masses[0]) if lumped else masses[0]
        return M, stiffs[0]
    mfactors = [lumped_mass(m) for m in masses] if lumped else masses
    M = _kron_all(mfactors)
    G = None
    for d in range(tg.D):
        term = _kron_all([stiffs[j] if j == d else masses[j] for j in range(tg.D)])
        G = term if G is None else G + term
    return M, G.tocsr()


def _cell_weights(grid: Grid1D, x: np.ndarray):
    t = (x - grid.offset) / grid.h
    # points on an interior cell boundary go to the lower cell
    cell = np.clip(np.ceil(t).astype(np.int64) - 1, 0, grid.K - 1)
    frac = np.clip(t - cell, 0.0, 1.0)
    return cell, frac


def check_inside(tg: TensorGrid, points: np.ndarray, tol: float = 1e-12):
    lo = tg.lower - tol * (tg.upper - tg.lower)
    hi = tg.upper + tol * (tg.upper - tg.lower)
    bad = np.flatnonzero(~np.all((points >= lo) & (points <= hi), axis=1))
    if bad.size:
        raise DomainError(
            f"point {int(bad[0])} at {points[bad[0]].tolist()} lies outside the grid box",
        )


def design_matrix(tg: TensorGrid, points) -> sp.csr_matrix:
    """Matrix with entries ``e_j(x_i)`` for the tensor hat basis."""
    pts = np.asarray(points, dtype=float).reshape(-1, tg.D)
    n_pts = pts.shape[0]
    if n_pts == 0:
        return sp.csr_matrix((0, tg.n_h))
    check_inside(tg, pts)
    cells, fracs = zip(*[_cell_weights(g, pts[:, d]) for d, g in enumerate(tg.grids)])
    strides = np.cumprod((tg.shape[1:] + (1,))[::-1])[::-1]
    rows, cols, vals = [], [], []
    for corner in itertools.product((0, 1), repeat=tg.D):
        idx = np.zeros(n_pts, dtype=np.int64)
        w = np.ones(n_pts)
        for d, c in enumerate(corner):
            idx += (cells[d] + c) * strides[d]
            w *= fracs[d] if c else (1.0 - fracs[d])
        rows.append(np.arange(n_pts))
        cols.append(idx)
        vals.append(w)
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_pts, tg.n_h),
    )
    S.eliminate_zeros()
    return S


def write_triplets(matrix, target) -> None:
    """Write ``rows cols nnz`` then ``i j value`` lines (0-based, 17 digits)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    lines += [
        f"{int(coo.row[k])} {int(coo.col[k])} {coo.data[k]:.17g}" for k in order
    ]
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)


def read_triplets(source) -> sp.csr_matrix:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    fh = io.StringIO(text)
    header = fh.readline().split()
    if len(header) != 3:
        raise ValueError("triplet header must read 'rows cols nnz'")
    n_rows, n_cols, nnz = (int(v) for v in header)
    body = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if body.shape[0] != nnz:
        raise ValueError(f"header announces {nnz} entries, found {body.shape[0]}")
    return sp.csr_matrix(
        (body[:, 2], (body[:, 0].astype(int), body[:, 1].astype(int))), shape=(n_rows, n_cols)
    )
