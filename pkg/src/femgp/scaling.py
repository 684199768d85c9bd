"""Mesh-size prescriptions and the computable prior-approximation check."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InconclusiveError, ParameterError
from .fem import TensorGrid
from .fields import coupled_error_mc
from .matern import MaternParams

TASKS = ("regression", "classification")


@dataclass(frozen=True)
class ScalingRecommendation:
    task: str
    s: float
    D: int
    N: int
    c: float
    exponent: float
    h_N: float
    n_h: Optional[int]

    def row(self) -> dict:
        return {
            "task": self.task,
            "s": self.s,
            "D": self.D,
            "N": self.N,
            "c": self.c,
            "exponent": self.exponent,
            "h_N": self.h_N,
            "n_h": "" if self.n_h is None else self.n_h,
        }


def rate_exponent(task: str, s: float, D: int) -> float:
    """Power ``a`` in ``h_N = c N^{-a}``."""
    if task == "regression":
        if not s > D:
            raise ParameterError(f"regression needs s > D (got s={s}, D={D})")
        return 1.0 / min(2 * s - 2 * D, 4)
    if task == "classification":
        if not s > D / 2:
            raise ParameterError(f"classification needs s > D/2 (got s={s}, D={D})")
        return 1.0 / min(2 * s - D, 4)
    raise ParameterError(f"task must be one of {TASKS}, got {task!r}")


def nodes_for_h(h: float, lengths: Sequence[float]) -> int:
    return int(np.prod([math.ceil(L / h - 1e-12) + 1 for L in lengths]))


def recommend_h(
    task: str,
    s: float,
    D: int,
    N: int,
    c: float = 1.0,
    lengths: Optional[Sequence[float]] = None,
    warn: bool = False,
) -> ScalingRecommendation:
    """Mesh size ``c N^{-a}`` that keeps the FE prior error below the
    posterior contraction rate.

    The constant ``c`` is not determined by theory and grows with ``kappa``
    and the domain size; calibrate it against a sweep.
    """
    if N < 1:
        raise ParameterError("N must be at least 1")
    if not c > 0:
        raise ParameterError("c must be positive")
    a = rate_exponent(task, s, D)
    if warn:
        warnings.warn("default proportionality constant c=1 is uncalibrated", stacklevel=2)
    h = c * float(N) ** (-a)
    n_h = None
    if lengths is not None:
        if len(lengths) != D:
            raise ParameterError(f"expected {D} domain lengths, got {len(lengths)}")
        n_h = nodes_for_h(h, lengths)
    return ScalingRecommendation(task, s, D, int(N), c, a, h, n_h)


@dataclass(frozen=True)
class ConditionResult:
    satisfied: bool
    lhs: float
    rhs: float
    stderr: float
    norm: str


def _task_norm(task: str) -> str:
    if task == "regression":
        return "Linf"
    if task == "classification":
        return "L2"
    raise ParameterError(f"task must be one of {TASKS}, got {task!r}")


def check_condition(
    params: MaternParams,
    tg: TensorGrid,
    N: int,
    task: str = "regression",
    mc_budget: int = 100,
    rng=0,
    J: Optional[int] = None,
    max_rel_stderr: float = 0.2,
) -> ConditionResult:
    """Compare ``10 E||u_h - u||^2`` against ``1/N``.

    The expectation is the coupled Monte Carlo estimate plus the KL
    truncation tail bound, so the verdict errs on the safe side. The sup
    norm is used for regression and the L2 norm for classification.
    """
    norm = _task_norm(task)
    est = coupled_error_mc(params, tg, J=J, n_rep=mc_budget, norm=norm, rng=rng)
    if est.mean_sq_error > 0 and est.stderr > max_rel_stderr * est.mean_sq_error:
        raise InconclusiveError(
            f"Monte Carlo stderr {est.stderr:.3g} exceeds {max_rel_stderr:.0%} of the "
            f"estimate {est.mean_sq_error:.3g}; increase the budget"
        )
    lhs = 10.0 * (est.mean_sq_error + est.tail_bound)
    rhs = 1.0 / N
    return ConditionResult(lhs <= rhs, lhs, rhs, 10.0 * est.stderr, norm)


def flip_h(
    params: MaternParams,
    lengths: Sequence[float],
    N: int,
    K_values: Sequence[int],
    task: str = "regression",
    mc_budget: int = 100,
    rng=0,
) -> float:
    """Mesh size at which ``check_condition`` changes verdict.

    ``K_values`` are cell counts per dimension in increasing order. The
    crossing of ``log lhs`` with ``log rhs`` is interpolated linearly in
    ``log h`` between the last failing and first passing grid. All grids
    share the same coefficient streams.
    """
    results = []
    for K in sorted(K_values):
        tg = TensorGrid.uniform(lengths, K)
        results.append((tg.h, check_condition(params, tg, N, task, mc_budget, rng)))
    for (h0, r0), (h1, r1) in zip(results, results[1:]):
        if not r0.satisfied and r1.satisfied:
            t = (math.log(r0.lhs) - math.log(r0.rhs)) / (math.log(r0.lhs) - math.log(r1.lhs))
            return math.exp(math.log(h0) + t * (math.log(h1) - math.log(h0)))
    if results and results[0][1].satisfied:
        raise ParameterError("condition already holds on the coarsest grid; add coarser levels")
    raise ParameterError("condition never holds on the given grids; add finer levels")
