"""Posterior computations with covariance-function and FE priors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import expit, log_expit

from .errors import ConditioningError, DomainError, IterationError, ParameterError, StepError
from .fem import TensorGrid, design_matrix
from .fields import PrecisionOperator, sample_weights
from .linalg import SparseCholesky
from .matern import BoxDomain, MaternParams, as_points, folded_cov, matern_matrix


@dataclass
class RegressionDataset:
    X: np.ndarray
    y: np.ndarray
    tau: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        D = 1 if np.ndim(self.X) <= 1 else np.shape(self.X)[1]
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), D) if self.y.size else np.zeros((0, D))
        if self.tau < 0:
            raise ParameterError("noise level tau must be nonnegative")

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def D(self) -> int:
        return self.X.shape[1]


@dataclass
class ClassificationDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ParameterError("labels must be 0 or 1")
        D = 1 if np.ndim(self.X) <= 1 else np.shape(self.X)[1]
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), D) if self.y.size else np.zeros((0, D))

    @property
    def N(self) -> int:
        return len(self.y)


def _cf_covariance(params, cov, domain, a, b, k_max):
    if cov == "matern":
        return matern_matrix(params, a, b)
    if cov == "folded":
        if domain is None:
            raise ParameterError("the folded covariance needs a box domain")
        A = as_points(a, params.D)
        B = as_points(b, params.D)
        ia, ib = np.meshgrid(np.arange(len(A)), np.arange(len(B)), indexing="ij")
        vals = folded_cov(params, domain, A[ia.ravel()], B[ib.ravel()], k_max=k_max)
        return np.asarray(vals).reshape(len(A), len(B))
    raise ParameterError(f"unknown covariance {cov!r}")


def regress_cf(
    data: RegressionDataset,
    params: MaternParams,
    cov: str = "matern",
    eval_points=None,
    domain: Optional[BoxDomain] = None,
    k_max: int = 3,
) -> np.ndarray:
    """Kriging mean ``Sigma_* (Sigma + tau^2 I)^{-1} y`` with a dense Cholesky."""
    X = data.X
    Sigma = _cf_covariance(params, cov, domain, X, X, k_max)
    A = Sigma + data.tau**2 * np.eye(data.N)
    try:
        cf = sla.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"Sigma + tau^2 I is not positive definite: {exc}") from exc
    alpha = sla.cho_solve(cf, data.y)
    if eval_points is None:
        return Sigma @ alpha
    return _cf_covariance(params, cov, domain, eval_points, X, k_max) @ alpha


def _normal_factor(S, Q, tau) -> SparseCholesky:
    A = (S.T @ S + tau**2 * Q).tocsr()
    try:
        return SparseCholesky(A)
    except ConditioningError as exc:
        raise ConditioningError(
            f"normal matrix S^T S + tau^2 Q is not SPD (pivot {exc.pivot})", pivot=exc.pivot
        ) from exc


def regress_fe(data: RegressionDataset, tg: TensorGrid, P: PrecisionOperator, eval_points=None) -> np.ndarray:
    """FE posterior mean ``S_eval (S^T S + tau^2 Q)^{-1} S^T y``."""
    S = design_matrix(tg, data.X)
    factor = _normal_factor(S, P.Q, data.tau)
    w = factor.solve(S.T @ data.y)
    S_eval = S if eval_points is None else design_matrix(tg, np.asarray(eval_points).reshape(-1, tg.D))
    return S_eval @ w


@dataclass
class PosteriorWeights:
    mean: np.ndarray
    precision: sp.csr_matrix
    factor: SparseCholesky = field(repr=False)

    def sample(self, rng, size=None) -> np.ndarray:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        z = gen.standard_normal(len(self.mean) if size is None else (len(self.mean), size))
        draw = self.factor.solve_lt(z)
        return draw + (self.mean if size is None else self.mean[:, None])


def posterior_weights(data: RegressionDataset, tg: TensorGrid, P: PrecisionOperator) -> PosteriorWeights:
    if data.tau <= 0:
        raise ParameterError("posterior precision needs tau > 0")
    S = design_matrix(tg, data.X)
    precision = (S.T @ S / data.tau**2 + P.Q).tocsr()
    factor = SparseCholesky(precision)
    mean = factor.solve(S.T @ data.y / data.tau**2)
    return PosteriorWeights(mean=mean, precision=precision, factor=factor)


# classification ---------------------------------------------------------


def _logistic_terms(t):
    phi = expit(t)
    one_minus = expit(-t)
    d1 = phi * one_minus
    d2 = d1 * (one_minus - phi)
    return phi, one_minus, d1, d2


def class_log_posterior(w, S, y, Q) -> float:
    t = S @ w
    return float(np.sum(y * log_expit(t) + (1 - y) * log_expit(-t)) - 0.5 * w @ (Q @ w))


def class_gradient(w, S, y, Q) -> np.ndarray:
    t = S @ w
    phi, one_minus, d1, _ = _logistic_terms(t)
    # derivative of the log-likelihood in t, before simplification
    g_t = d1 * (y / phi - (1 - y) / one_minus)
    return S.T @ g_t - Q @ w


def hessian_weights(t, y) -> np.ndarray:
    """Diagonal ``D`` of the log-posterior Hessian ``S^T D S - Q``."""
    phi, one_minus, d1, d2 = _logistic_terms(t)
    return d2 * (y / phi - (1 - y) / one_minus) - d1**2 * (y / phi**2 + (1 - y) / one_minus**2)


def class_hessian(w, S, y, Q) -> sp.csr_matrix:
    Dg = hessian_weights(S @ w, y)
    return (S.T @ sp.diags(Dg) @ S - Q).tocsr()


def classify_map(
    data: ClassificationDataset,
    tg: TensorGrid,
    P: PrecisionOperator,
    w0=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 30,
    trace: Optional[list] = None,
) -> np.ndarray:
    """Newton ascent on the logistic log-posterior with step halving."""
    S = design_matrix(tg, data.X)
    Q, y = P.Q, data.y
    w = np.zeros(tg.n_h) if w0 is None else np.asarray(w0, dtype=float).copy()
    obj = class_log_posterior(w, S, y, Q)
    if trace is not None:
        trace.append(obj)
    grad = class_gradient(w, S, y, Q)
    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm <= tol:
            return w
        neg_hess = -class_hessian(w, S, y, Q)
        step = SparseCholesky(neg_hess).solve(grad)
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = w + scale * step
            cand_obj = class_log_posterior(cand, S, y, Q)
            if cand_obj >= obj:
                break
            scale *= 0.5
        else:
            raise StepError(f"no ascent after {max_halvings} step halvings")
        w, obj = cand, cand_obj
        if trace is not None:
            trace.append(obj)
        grad = class_gradient(w, S, y, Q)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    if gnorm <= tol:
        return w
    raise IterationError(f"Newton did not converge in {max_iter} iterations", grad_norm=gnorm)


# pCN --------------------------------------------------------------------


def pcn_step(w, theta: float, P: PrecisionOperator, rng) -> np.ndarray:
    """``theta w + sqrt(1 - theta^2) gamma`` with ``gamma ~ N(0, Q^{-1})``."""
    if not 0 <= theta <= 1:
        raise ParameterError("theta must lie in [0, 1]")
    return theta * np.asarray(w) + math.sqrt(1 - theta**2) * sample_weights(P, rng)


@dataclass
class ChainSummary:
    mean: np.ndarray
    acceptance_rate: float
    variance: np.ndarray
    batch_stderr: np.ndarray
    n_iter: int


def _log_likelihood(data, S):
    if data is None:
        return lambda w: 0.0
    if isinstance(data, RegressionDataset):
        if data.tau <= 0:
            raise ParameterError("regression likelihood needs tau > 0")
        y, tau2 = data.y, data.tau**2
        return lambda w: -0.5 * float(np.sum((y - S @ w) ** 2)) / tau2
    if isinstance(data, ClassificationDataset):
        y = data.y
        return lambda w: float(np.sum(y * log_expit(S @ w) + (1 - y) * log_expit(-(S @ w))))
    raise ParameterError(f"unsupported data type {type(data).__name__}")


def pcn_sampler(
    data,
    tg: TensorGrid,
    P: PrecisionOperator,
    theta: float,
    n_iter: int,
    rng,
    w0=None,
    burn_in: int = 0,
    n_batches: int = 50,
    block: int = 1000,
) -> ChainSummary:
    """Metropolis-Hastings with pCN proposals.

    The prior is invariant under the proposal, so acceptance uses the
    likelihood ratio alone. ``data=None`` targets the prior and accepts
    every move. Standard errors use batch means over the kept draws.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    S = design_matrix(tg, data.X) if data is not None else None
    loglik = _log_likelihood(data, S)
    w = np.zeros(tg.n_h) if w0 is None else np.asarray(w0, dtype=float).copy()
    ll = loglik(w)
    c = math.sqrt(1 - theta**2)
    kept = n_iter - burn_in
    if kept < n_batches:
        raise ParameterError("too few kept iterations for the batch count")
    batch_len = kept // n_batches
    batch_sums = np.zeros((n_batches, tg.n_h))
    total = np.zeros(tg.n_h)
    total_sq = np.zeros(tg.n_h)
    accepted = 0
    it = 0
    while it < n_iter:
        m = min(block, n_iter - it)
        gammas = sample_weights(P, gen, size=m)
        logu = np.log(gen.uniform(size=m))
        for k in range(m):
            prop = theta * w + c * gammas[:, k]
            ll_prop = loglik(prop)
            if ll_prop - ll >= logu[k]:
                w, ll = prop, ll_prop
                accepted += 1
            j = it + k - burn_in
            if j >= 0:
                total += w
                total_sq += w * w
                b = j // batch_len
                if b < n_batches:
                    batch_sums[b] += w
        it += m
    mean = total / kept
    var = total_sq / kept - mean**2
    batch_means = batch_sums / batch_len
    stderr = batch_means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return ChainSummary(
        mean=mean,
        acceptance_rate=accepted / n_iter,
        variance=var,
        batch_stderr=stderr,
        n_iter=n_iter,
    )
