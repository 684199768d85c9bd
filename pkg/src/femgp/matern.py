"""Matern covariance kernels and parameter bookkeeping.

Two covariances live here: the stationary Matern kernel on R^D and the
covariance of the Neumann Matern-type field on a box, written as a sum of
reflected and translated copies of the stationary kernel.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, ParameterError

# Below this multiple of 1/kappa the kernel returns sigma2 exactly.
_R_TINY = 1e-12


@dataclass(frozen=True)
class MaternParams:
    """Smoothness ``s``, inverse lengthscale ``kappa`` and dimension ``D``.

    The Matern smoothness is ``nu = s - D/2``. ``sigma2`` defaults to the
    marginal variance of the field solving
    ``(kappa^2 - Laplacian)^{s/2} u = kappa^{s - D/2} W``.

    ``check=False`` skips the ``s > D/2`` requirement. Only finite
    dimensional FE constructions are meaningful in that case.
    """

    D: int
    s: float
    kappa: float
    sigma2_override: Optional[float] = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if int(self.D) != self.D or self.D < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.D}")
        if not (self.kappa > 0) or not math.isfinite(self.kappa):
            raise ParameterError(f"kappa must be positive, got {self.kappa}")
        if not math.isfinite(self.s) or self.s <= 0:
            raise ParameterError(f"s must be positive, got {self.s}")
        if self.check and self.s <= self.D / 2:
            raise DomainError(f"need s > D/2, got s={self.s}, D={self.D}")
        if self.sigma2_override is not None and not self.sigma2_override > 0:
            raise ParameterError("sigma2 override must be positive")

    @property
    def nu(self) -> float:
        return self.s - self.D / 2

    @property
    def rho(self) -> float:
        """Correlation range sqrt(8 nu) / kappa."""
        return math.sqrt(8 * self.nu) / self.kappa

    @property
    def sigma2(self) -> float:
        if self.sigma2_override is not None:
            return self.sigma2_override
        return default_sigma2(self)

    @property
    def integer_s(self) -> bool:
        return float(self.s).is_integer()


@dataclass(frozen=True)
class BoxDomain:
    """The box (0, L_1) x ... x (0, L_D)."""

    lengths: tuple

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        if not lengths or any(not (v > 0) for v in lengths):
            raise ParameterError(f"box lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def D(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, points, closed=True) -> np.ndarray:
        pts = as_points(points, self.D)
        L = np.asarray(self.lengths)
        if closed:
            return np.all((pts >= 0) & (pts <= L), axis=1)
        return np.all((pts > 0) & (pts < L), axis=1)


def as_points(points, D: int) -> np.ndarray:
    """Coerce ``points`` to an ``(n, D)`` float array."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, D) if (D > 1 and pts.size == D) else pts.reshape(-1, 1)
    if pts.shape[1] != D:
        raise DomainError(f"expected points of dimension {D}, got shape {pts.shape}")
    return pts


def default_sigma2(params: MaternParams) -> float:
    """Gamma(s - D/2) / ((4 pi)^{D/2} Gamma(s))."""
    D, s = params.D, params.s
    if s <= D / 2:
        raise DomainError(f"need s > D/2, got s={s}, D={D}")
    return math.exp(
        math.lgamma(s - D / 2) - (D / 2) * math.log(4 * math.pi) - math.lgamma(s)
    )


def _half_integer_order(nu: float) -> Optional[int]:
    p = nu - 0.5
    if p >= 0 and abs(p - round(p)) < 1e-12:
        return int(round(p))
    return None


def _matern_half_integer(p: int, z: np.ndarray) -> np.ndarray:
    # (2^{1-nu}/Gamma(nu)) z^nu K_nu(z) for nu = p + 1/2
    total = np.zeros_like(z)
    for k in range(p + 1):
        coef = math.factorial(p + k) / (math.factorial(k) * math.factorial(p - k))
        total = total + coef * (2 * z) ** (p - k)
    return math.factorial(p) / math.factorial(2 * p) * np.exp(-z) * total


def matern_correlation(nu: float, z) -> np.ndarray:
    """Unit-variance Matern correlation as a function of ``z = kappa * r``."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    big = z >= _R_TINY
    p = _half_integer_order(nu)
    if p is not None:
        out[big] = _matern_half_integer(p, z[big])
        return out
    zb = z[big]
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        vals = np.exp(
            (1 - nu) * math.log(2) - special.gammaln(nu) + nu * np.log(zb)
        ) * special.kv(nu, zb)
    # kv underflows to 0 for large z; the product then is 0 as well
    vals[~np.isfinite(vals)] = 0.0
    out[big] = vals
    return out


def matern_cov(params: MaternParams, r):
    """Stationary Matern covariance at distance ``r`` (scalar or array)."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(np.isnan(r_arr)):
        raise DomainError("distance is NaN")
    if np.any(r_arr < 0):
        raise DomainError("distance must be nonnegative")
    out = params.sigma2 * matern_correlation(params.nu, params.kappa * r_arr)
    return float(out) if np.ndim(r) == 0 else out


def matern_cov_general(params: MaternParams, r):
    """Bessel-function evaluation with no half-integer shortcut."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(np.isnan(r_arr)) or np.any(r_arr < 0):
        raise DomainError("distance must be a nonnegative number")
    z = params.kappa * r_arr
    nu = params.nu
    out = np.ones_like(z)
    big = z >= _R_TINY
    zb = z[big]
    with np.errstate(under="ignore"):
        out[big] = 2 ** (1 - nu) / special.gamma(nu) * zb**nu * special.kv(nu, zb)
    out = params.sigma2 * out
    return float(out) if np.ndim(r) == 0 else out


def pairwise_distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def matern_matrix(params: MaternParams, a, b=None) -> np.ndarray:
    """Matern covariance matrix between two point sets of shape (n, D)."""
    a = as_points(a, params.D)
    b = a if b is None else as_points(b, params.D)
    return matern_cov(params, pairwise_distances(a, b))


def _folded_offsets(domain: BoxDomain, k_max: int):
    D = domain.D
    L = np.asarray(domain.lengths)
    ks = np.array(list(itertools.product(range(-k_max, k_max + 1), repeat=D)), dtype=float)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=D)))
    return signs, 2.0 * ks * L


def folded_cov(params: MaternParams, domain: BoxDomain, x, x2, k_max: int = 3):
    """Covariance of the Neumann Matern-type field on a box.

    Sums ``c_Mat(T x, x2 - 2 k L)`` over the ``2^D`` sign matrices ``T``
    and the translations ``k`` with ``max_d |k_d| <= k_max``. ``x`` and
    ``x2`` may be single points or equally shaped ``(n, D)`` arrays, in
    which case the covariance is evaluated pairwise row by row.
    """
    if k_max < 0:
        raise ParameterError("k_max must be nonnegative")
    if params.D != domain.D:
        raise DomainError("parameter and domain dimensions differ")
    single = np.ndim(x) <= 1 and np.size(x) == domain.D
    xa = as_points(x, domain.D)
    xb = as_points(x2, domain.D)
    if xa.shape != xb.shape:
        raise DomainError("point arrays must have the same shape")
    for pts in (xa, xb):
        if not np.all(domain.contains(pts, closed=True)):
            raise DomainError("points must lie in the closed box")
    signs, shifts = _folded_offsets(domain, k_max)
    total = np.zeros(xa.shape[0])
    for T in signs:
        tx = xa * T
        for shift in shifts:
            d = tx - (xb - shift)
            total += matern_cov(params, np.sqrt(np.sum(d * d, axis=1)))
    return float(total[0]) if single else total


def folded_tail_bound(params: MaternParams, domain: BoxDomain, k_max: int) -> float:
    """Crude size of the first omitted layer of translations.

    Every omitted translation sits at distance at least
    ``2 k_max min_d L_d`` from the box, so the stationary kernel at that
    distance bounds each omitted term.
    """
    if k_max == 0:
        return float("inf")
    dist = 2 * k_max * min(domain.lengths) - max(domain.lengths)
    dist = max(dist, 0.0)
    n_terms = (2 ** domain.D) * ((2 * k_max + 3) ** domain.D - (2 * k_max + 1) ** domain.D)
    return n_terms * matern_cov(params, dist)


__all__ = [
    "MaternParams",
    "BoxDomain",
    "default_sigma2",
    "matern_cov",
    "matern_cov_general",
    "matern_matrix",
    "matern_correlation",
    "folded_cov",
    "folded_tail_bound",
    "as_points",
]
