"""Samplers and covariances for the Matern-type field and its FE version.

The continuum field on a box is the truncated series

    u(x) = kappa^{s-D/2} sum_i (kappa^2 + Lambda_i)^{-s/2} xi_i Psi_i(x)

and the FE field replaces ``(Lambda_i, Psi_i)`` by the Galerkin eigenpairs.
Coefficients are keyed by multi-index so a continuum draw and an FE draw
can share them, which is what the coupled error estimator relies on.
The same FE field has the sparse representation ``w ~ N(0, Q^{-1})``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    AssemblyError,
    CouplingError,
    DomainError,
    ParameterError,
    ResourceError,
    UnsupportedError,
)
from .fem import Grid1D, TensorGrid, design_matrix, lumped_mass, tensor_mass_stiffness
from .linalg import SparseCholesky
from .matern import BoxDomain, MaternParams
from .spectral import (
    continuum_basis,
    continuum_eigenvalues,
    eval_grid_1d,
    fe_eigenvalues,
    fe_nodal_matrix,
)

MAX_COEFFICIENTS = 50_000_000


class CoefficientMap:
    """Standard normal coefficients indexed by multi-index.

    Draws come from independent streams keyed on the leading ``D-1``
    indices, each stream running along the last index. Values therefore
    depend only on ``(seed, multi-index)``: enlarging a request never
    changes values already handed out.
    """

    def __init__(self, seed, D: int):
        self.D = int(D)
        self._entropy = seed if isinstance(seed, (list, tuple)) else [int(seed)]
        self._rows: dict = {}
        self._fixed: Optional[np.ndarray] = None

    @classmethod
    def from_array(cls, values) -> "CoefficientMap":
        values = np.asarray(values, dtype=float)
        obj = cls(0, values.ndim)
        obj._fixed = values
        return obj

    @classmethod
    def zeros(cls, shape) -> "CoefficientMap":
        return cls.from_array(np.zeros(shape))

    def _row(self, key: tuple, length: int) -> np.ndarray:
        have = self._rows.get(key)
        if have is not None and have[0].size >= length:
            return have[0][:length]
        if have is None:
            ss = np.random.SeedSequence(self._entropy, spawn_key=key)
            gen = np.random.Generator(np.random.PCG64(ss))
            vals = np.empty(0)
        else:
            vals, gen = have
        vals = np.concatenate([vals, gen.standard_normal(length - vals.size)])
        self._rows[key] = (vals, gen)
        return vals

    def block(self, shape) -> np.ndarray:
        """Coefficients for all multi-indices in ``[0, shape_d)``."""
        shape = tuple(int(n) for n in shape)
        if len(shape) != self.D:
            raise CouplingError(f"expected a {self.D}-dimensional block, got {shape}")
        if int(np.prod(shape)) > MAX_COEFFICIENTS:
            raise ResourceError(f"{np.prod(shape)} coefficients exceed the cap")
        if self._fixed is not None:
            if any(n > m for n, m in zip(shape, self._fixed.shape)):
                raise CouplingError(
                    f"coefficients known on {self._fixed.shape}, requested {shape}"
                )
            return self._fixed[tuple(slice(0, n) for n in shape)]
        out = np.empty(shape)
        for lead in np.ndindex(*shape[:-1]):
            out[lead] = self._row(tuple(int(v) for v in lead), shape[-1])
        return out


def _as_coefficients(rng, D: int) -> CoefficientMap:
    if isinstance(rng, CoefficientMap):
        if rng.D != D:
            raise CouplingError("coefficient map dimension does not match the field")
        return rng
    if isinstance(rng, np.random.Generator):
        return CoefficientMap(int(rng.integers(2**63)), D)
    return CoefficientMap(0 if rng is None else rng, D)


def multilinear(core: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``mats[d]`` along axis ``d`` of ``core``; axis d maps via mats[d] @ ."""
    out = core
    for m in mats:
        # contract the leading axis, append the new one at the end
        out = np.tensordot(out, m, axes=([0], [1]))
    return out


def _spectral_weights(params: MaternParams, eigenvalue_lists) -> np.ndarray:
    lam = np.zeros(tuple(len(v) for v in eigenvalue_lists))
    for d, vals in enumerate(eigenvalue_lists):
        shape = [1] * len(eigenvalue_lists)
        shape[d] = len(vals)
        lam = lam + np.asarray(vals).reshape(shape)
    s, kappa, D = params.s, params.kappa, params.D
    return kappa ** (s - D / 2) * (kappa**2 + lam) ** (-s / 2)


@dataclass
class KLField:
    """Truncated continuum series with coefficients up to ``J`` per axis."""

    params: MaternParams
    domain: BoxDomain
    J: int
    coefficients: np.ndarray

    @property
    def amplitudes(self) -> np.ndarray:
        return _spectral_weights(
            self.params, [continuum_eigenvalues(L, self.J + 1) for L in self.domain.lengths]
        )

    def scaled(self) -> np.ndarray:
        return self.amplitudes * self.coefficients

    def evaluate_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        """Values on the tensor grid ``axes[0] x ... x axes[D-1]``."""
        mats = [continuum_basis(L, self.J + 1, x) for L, x in zip(self.domain.lengths, axes)]
        return multilinear(self.scaled(), mats)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.domain.D)
        C = self.scaled()
        bases = [continuum_basis(L, self.J + 1, pts[:, d]) for d, L in enumerate(self.domain.lengths)]
        out = np.tensordot(bases[0], C, axes=([1], [0]))
        for B in bases[1:]:
            out = np.einsum("nj...,nj->n...", out, B)
        return out


def kl_covariance(params: MaternParams, domain: BoxDomain, J: int, x, x2) -> np.ndarray:
    """``sum_i a_i^2 psi_i(x) psi_i(x2)`` over modes up to ``J`` per axis, row by row."""
    xa = np.asarray(x, dtype=float).reshape(-1, domain.D)
    xb = np.asarray(x2, dtype=float).reshape(-1, domain.D)
    a2 = _spectral_weights(params, [continuum_eigenvalues(L, J + 1) for L in domain.lengths]) ** 2
    prods = [
        continuum_basis(L, J + 1, xa[:, d]) * continuum_basis(L, J + 1, xb[:, d])
        for d, L in enumerate(domain.lengths)
    ]
    out = np.tensordot(prods[0], a2, axes=([1], [0]))
    for B in prods[1:]:
        out = np.einsum("nj...,nj->n...", out, B)
    return out


def sample_true_kl(params: MaternParams, domain: BoxDomain, J: int, rng) -> KLField:
    if J < 1:
        raise ParameterError("truncation J must be at least 1")
    if params.D != domain.D:
        raise DomainError("parameter and domain dimensions differ")
    coeffs = _as_coefficients(rng, domain.D).block((J + 1,) * domain.D)
    return KLField(params=params, domain=domain, J=int(J), coefficients=coeffs)


@dataclass
class FEField:
    tg: TensorGrid
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != self.tg.n_h:
            raise ParameterError(f"expected {self.tg.n_h} weights, got {self.weights.size}")

    def __call__(self, points) -> np.ndarray:
        return design_matrix(self.tg, points) @ self.weights

    def evaluate_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        mats = [
            design_matrix(TensorGrid((g,), max_ratio=np.inf), np.asarray(x)[:, None]).toarray()
            for g, x in zip(self.tg.grids, axes)
        ]
        return multilinear(self.weights.reshape(self.tg.shape), mats)


def fe_spectral_amplitudes(params: MaternParams, tg: TensorGrid) -> np.ndarray:
    return _spectral_weights(params, [fe_eigenvalues(g) for g in tg.grids])


def sample_fe_spectral(params: MaternParams, tg: TensorGrid, shared=None, rng=None) -> FEField:
    """FE field from its eigen-expansion, coefficients matched by multi-index."""
    if params.D != tg.D:
        raise DomainError("parameter and grid dimensions differ")
    source = shared if shared is not None else rng
    coeffs = _as_coefficients(source, tg.D).block(tg.shape)
    core = fe_spectral_amplitudes(params, tg) * coeffs
    W = multilinear(core, [fe_nodal_matrix(g) for g in tg.grids])
    return FEField(tg=tg, weights=W.ravel())


@dataclass
class PrecisionOperator:
    """Sparse precision of the FE weights with a banded Cholesky factor."""

    Q: sp.csr_matrix
    s: float
    kappa: float
    lumped: bool
    normalized: bool
    factor: SparseCholesky = field(default=None, repr=False)

    def __post_init__(self):
        if self.factor is None:
            self.factor = SparseCholesky(self.Q)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def solve(self, b):
        return self.factor.solve(b)

    def dense_covariance(self) -> np.ndarray:
        return self.factor.solve(np.eye(self.n))


def _symmetrize(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    return ((A + A.T) * 0.5).tocsr()


def assemble_precision(
    params: MaternParams, M, G, lumped: bool = False, normalize: bool = True
) -> PrecisionOperator:
    """``Q = (k^2 M + G) [Mi^{-1} (k^2 M + G)]^{s-1}``, ``Mi`` lumped if asked.

    ``M`` and ``G`` are the consistent mass and stiffness matrices. With
    ``normalize`` the result is scaled by ``kappa^{D - 2s}`` so that the
    weights carry the variance of the field including its
    ``kappa^{s - D/2}`` prefactor; ``normalize=False`` returns the bare
    operator. Without lumping and ``s >= 2`` the result is dense.
    """
    if not params.integer_s or params.s < 1:
        raise UnsupportedError(
            f"precision assembly needs a positive integer s, got {params.s}; "
            "use sample_fe_spectral for fractional smoothness"
        )
    s = int(params.s)
    k2 = params.kappa**2
    A = (k2 * sp.csr_matrix(M) + sp.csr_matrix(G)).tocsr()
    Q = A
    if s > 1:
        if lumped:
            Mt = lumped_mass(M)
            inv_diag = sp.diags(1.0 / Mt.diagonal(), 0, format="csr")
            for _ in range(s - 1):
                Q = Q @ (inv_diag @ A)
        else:
            lu = spla.splu(sp.csc_matrix(M))
            B = lu.solve(A.toarray())
            Qd = A.toarray()
            for _ in range(s - 1):
                Qd = Qd @ B
            Q = sp.csr_matrix(Qd)
    Q = _symmetrize(Q)
    if normalize:
        Q = Q * params.kappa ** (params.D - 2 * params.s)
    return PrecisionOperator(Q=Q.tocsr(), s=params.s, kappa=params.kappa, lumped=lumped, normalized=normalize)


def precision_for_grid(params: MaternParams, tg: TensorGrid, lumped: bool = True, normalize: bool = True):
    M, G = tensor_mass_stiffness(tg, lumped=False)
    return assemble_precision(params, M, G, lumped=lumped, normalize=normalize)


def sample_weights(P: PrecisionOperator, rng, size: Optional[int] = None) -> np.ndarray:
    """Draw from ``N(0, Q^{-1})``; ``size`` columns if given."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z = gen.standard_normal(P.n if size is None else (P.n, size))
    return P.factor.solve_lt(z)


def spectral_node_covariance(params: MaternParams, tg: TensorGrid) -> np.ndarray:
    """Covariance of the spectral FE field at the grid nodes (dense)."""
    amps = fe_spectral_amplitudes(params, tg).ravel()
    Z = None
    for g in tg.grids:
        Zd = fe_nodal_matrix(g)
        Z = Zd if Z is None else np.kron(Z, Zd)
    ZA = Z * amps
    return ZA @ ZA.T


def covariance_equivalence_check(params: MaternParams, tg: TensorGrid, lumped: bool = False) -> float:
    """Largest entrywise gap between the spectral and precision covariances."""
    if lumped:
        raise ParameterError("the covariance identity holds only for the consistent mass matrix")
    if tg.n_h > 2000:
        raise ResourceError("covariance check is dense; keep n_h <= 2000")
    C_spec = spectral_node_covariance(params, tg)
    P = precision_for_grid(params, tg, lumped=False, normalize=True)
    C_prec = np.linalg.inv(P.Q.toarray())
    return float(np.max(np.abs(C_spec - C_prec)))


def fe_continuum_gram(grid: Grid1D, J: int) -> np.ndarray:
    """Exact ``<psi_h,i, psi_j>`` for FE modes ``i <= K`` and cosines ``j <= J``."""
    if abs(grid.offset) > 0:
        raise DomainError("grid must start at 0 to match the continuum modes")
    L, h, K = grid.L, grid.h, grid.K
    j = np.arange(J + 1)
    omega = j * math.pi / L
    x = grid.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        half = np.where(j == 0, h / 2, (1 - np.cos(omega * h)) / (omega**2 * h))
    weight = np.full(K + 1, 2.0)
    weight[0] = weight[-1] = 1.0
    # integral of each hat against each unnormalized cosine
    P = weight[:, None] * np.cos(np.outer(x, omega)) * half[None, :]
    norm = np.full(J + 1, math.sqrt(2.0 / L))
    norm[0] = 1.0 / math.sqrt(L)
    return fe_nodal_matrix(grid).T @ (P * norm)


def kl_tail_bound(params: MaternParams, lengths: Sequence[float], J: int, norm: str = "L2") -> float:
    """Bound on ``E||u - u_J||^2`` for the modes outside ``[0, J]^D``.

    Exact for ``D = 1`` in L2. For the sup norm it is
    ``kappa^{2s-D} (sup|Psi| sum |a_i|)^2``, infinite when ``s <= D``.
    """
    D, s, kappa = params.D, params.s, params.kappa
    Lmax = max(lengths)
    power = s if norm == "L2" else s / 2
    if norm != "L2" and s <= D:
        return math.inf
    chunk = 200_000
    m = np.arange(J + 1, J + 1 + chunk, dtype=float)
    count = (m + 1) ** D - m**D
    total = float(np.sum(count * (kappa**2 + (m * math.pi / Lmax) ** 2) ** (-power)))
    m_end = J + chunk
    exponent = 2 * power - D
    total += D * 2 ** (D - 1) * (Lmax / math.pi) ** (2 * power) * m_end ** (-exponent) / exponent
    if norm == "L2":
        return kappa ** (2 * s - D) * total
    sup = math.prod(math.sqrt(2.0 / L) for L in lengths)
    return kappa ** (2 * s - D) * (sup * total) ** 2


def _check_coupling(tg: TensorGrid, J: int):
    if J < max(g.K for g in tg.grids):
        raise CouplingError(f"truncation J={J} must be at least the largest FE index")
    if any(abs(g.offset) > 0 for g in tg.grids):
        raise DomainError("coupled estimation needs grids starting at 0")


def expected_l2_error(params: MaternParams, tg: TensorGrid, J: int, include_tail: bool = False) -> float:
    """Exact ``E||u_h - u_J||_2^2`` with coefficients shared by multi-index."""
    _check_coupling(tg, J)
    lengths = [g.L for g in tg.grids]
    a = _spectral_weights(params, [continuum_eigenvalues(L, J + 1) for L in lengths])
    b = fe_spectral_amplitudes(params, tg)
    diag = np.ones(tg.shape)
    for d, g in enumerate(tg.grids):
        Bd = np.diagonal(fe_continuum_gram(g, J))
        shape = [1] * tg.D
        shape[d] = g.n_nodes
        diag = diag * Bd.reshape(shape)
    a_low = a[tuple(slice(0, n) for n in tg.shape)]
    val = float(np.sum(a**2) + np.sum(b**2) - 2 * np.sum(a_low * b * diag))
    if include_tail:
        val += kl_tail_bound(params, lengths, J, "L2")
    return val


@dataclass
class FieldErrorEstimate:
    h: float
    norm: str
    mean_sq_error: float
    stderr: float
    tail_bound: float
    n_rep: int
    J: int
    samples: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        """Estimate of ``E||u_h - u||^2``: L2 tail is additive and exact."""
        return self.mean_sq_error + self.tail_bound if self.norm == "L2" else self.mean_sq_error


def _replicate_seed(rng, rep: int):
    if isinstance(rng, np.random.Generator):
        return [int(rng.integers(2**63)), rep]
    return [0 if rng is None else int(rng), rep]


def coupled_sq_errors(
    params: MaternParams,
    tg: TensorGrid,
    J: int,
    coeffs: CoefficientMap,
    norms: Sequence[str] = ("L2",),
    per_cell: int = 8,
) -> dict:
    """Squared errors ``||u_h - u_J||^2`` for one shared coefficient draw."""
    _check_coupling(tg, J)
    lengths = [g.L for g in tg.grids]
    domain = BoxDomain(tuple(lengths))
    u = sample_true_kl(params, domain, J, coeffs)
    uh_core = fe_spectral_amplitudes(params, tg) * coeffs.block(tg.shape)
    out = {}
    if "L2" in norms:
        cu = u.scaled()
        grams = [fe_continuum_gram(g, J) for g in tg.grids]
        cross = multilinear(cu, grams)
        out["L2"] = float(np.sum(cu**2) + np.sum(uh_core**2) - 2 * np.sum(uh_core * cross))
    if "Linf" in norms:
        axes = [eval_grid_1d(g, per_cell) for g in tg.grids]
        W = multilinear(uh_core, [fe_nodal_matrix(g) for g in tg.grids])
        uh_vals = FEField(tg, W.ravel()).evaluate_grid(axes)
        out["Linf"] = float(np.max(np.abs(uh_vals - u.evaluate_grid(axes))) ** 2)
    return out


def coupled_error_mc(
    params: MaternParams,
    tg: TensorGrid,
    J: Optional[int] = None,
    n_rep: int = 100,
    norm: str = "L2",
    rng=0,
    per_cell: int = 8,
) -> FieldErrorEstimate:
    """Monte Carlo estimate of ``E||u_h - u||^2`` with coupled coefficients.

    Replicate ``r`` uses the coefficient streams keyed by ``(seed, r)``, so
    calls on different grids with the same seed reuse the same draws.
    """
    if norm not in ("L2", "Linf"):
        raise ParameterError(f"norm must be 'L2' or 'Linf', got {norm!r}")
    if n_rep < 2:
        raise ParameterError("need at least two replicates")
    J = 4 * max(g.K for g in tg.grids) if J is None else int(J)
    _check_coupling(tg, J)
    vals = np.empty(n_rep)
    for r in range(n_rep):
        coeffs = CoefficientMap(_replicate_seed(rng, r), tg.D)
        vals[r] = coupled_sq_errors(params, tg, J, coeffs, (norm,), per_cell)[norm]
    return FieldErrorEstimate(
        h=tg.h,
        norm=norm,
        mean_sq_error=float(vals.mean()),
        stderr=float(vals.std(ddof=1) / math.sqrt(n_rep)),
        tail_bound=kl_tail_bound(params, [g.L for g in tg.grids], J, norm),
        n_rep=n_rep,
        J=J,
        samples=vals,
    )
