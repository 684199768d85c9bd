"""Simulation protocol comparing covariance-function and FE regression.

A sweep draws a rough-boundary truth from the full trigonometric series,
fixed uniform design points and Gaussian noise for every ``(N, replicate)``
cell, then fits the dense Matérn kriging estimator once and the FE
estimator for each grid size. All randomness for a cell comes from a
``SeedSequence`` keyed by ``(seed, N, replicate)``, so results do not depend
on scheduling.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, FemGPError, InsufficientDataError, ParameterError
from .fem import Grid1D, TensorGrid
from .fields import precision_for_grid
from .inference import RegressionDataset, regress_cf, regress_fe
from .matern import MaternParams


class TruthField:
    """``f0(x) = kappa^{s - D/2} sum_c xi_c (kappa^2 + Lambda_c)^{-s/2} phi_c(x)``.

    ``phi_c`` are products of the one-dimensional orthonormal functions
    ``1/sqrt(L)``, ``sqrt(2/L) cos(i pi x / L)`` and ``sqrt(2/L) sin(i pi x / L)``
    for ``1 <= i <= J``. Along each axis the columns are ordered
    ``[const, cos_1..cos_J, sin_1..sin_J]``.
    """

    def __init__(self, s0: float, kappa0: float, lengths: Sequence[float], J: int, coefficients: np.ndarray):
        self.s0 = float(s0)
        self.kappa0 = float(kappa0)
        self.lengths = tuple(float(L) for L in lengths)
        self.J = int(J)
        D = len(self.lengths)
        m = 2 * self.J + 1
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (m,) * D:
            raise ParameterError(f"expected coefficients of shape {(m,) * D}, got {coefficients.shape}")
        freq = np.concatenate([[0], np.arange(1, J + 1), np.arange(1, J + 1)])
        lam = np.zeros((m,) * D)
        for d, L in enumerate(self.lengths):
            shape = [1] * D
            shape[d] = m
            lam = lam + ((freq * math.pi / L) ** 2).reshape(shape)
        amp = kappa0 ** (s0 - D / 2) * (kappa0**2 + lam) ** (-s0 / 2)
        self.core = amp * coefficients

    @property
    def D(self) -> int:
        return len(self.lengths)

    def _basis(self, d: int, x: np.ndarray) -> np.ndarray:
        L = self.lengths[d]
        arg = np.outer(x, np.arange(1, self.J + 1) * math.pi / L)
        c = math.sqrt(2.0 / L)
        return np.hstack([np.full((len(x), 1), 1.0 / math.sqrt(L)), c * np.cos(arg), c * np.sin(arg)])

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.D)
        n = len(pts)
        R = self._basis(0, pts[:, 0]) @ self.core.reshape(2 * self.J + 1, -1)
        for d in range(1, self.D):
            B = self._basis(d, pts[:, d])
            R = np.einsum("nmr,nm->nr", R.reshape(n, 2 * self.J + 1, -1), B)
        return R.reshape(n)


def _generator(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def gen_truth(s0: float, kappa0: float, lengths: Sequence[float], J: int, rng) -> TruthField:
    D = len(lengths)
    if not s0 > D / 2:
        raise ParameterError(f"truth smoothness must exceed D/2, got s0={s0}")
    if J < 1:
        raise ParameterError("truncation J must be at least 1")
    xi = _generator(rng).standard_normal((2 * J + 1,) * D)
    return TruthField(s0, kappa0, lengths, J, xi)


def gen_truth_1d(s0: float, kappa0: float, L: float, J: int, rng) -> TruthField:
    return gen_truth(s0, kappa0, [L], J, rng)


def gen_truth_2d(s0: float, kappa0: float, L: float, J: int, rng) -> TruthField:
    return gen_truth(s0, kappa0, [L, L], J, rng)


def truth_second_moment_1d(s0: float, kappa0: float, L: float, J: int) -> float:
    """``E||f0||_2^2`` on ``[0, L]`` for the one-dimensional series."""
    i = np.arange(1, J + 1)
    return 1.0 / kappa0 + 2 * kappa0 ** (2 * s0 - 1) * float(np.sum((kappa0**2 + (i * math.pi / L) ** 2) ** (-s0)))


@dataclass(frozen=True)
class OffsetBox:
    """Box ``prod_d [offsets_d, offsets_d + lengths_d]``."""

    lengths: tuple
    offsets: tuple

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.offsets)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.offsets) + np.asarray(self.lengths)


def extend_domain(lengths: Sequence[float], params: MaternParams, factor: float) -> OffsetBox:
    """Box ``[-factor rho, L + factor rho]`` per axis."""
    if factor < 0:
        raise ParameterError("extension factor must be nonnegative")
    pad = factor * params.rho
    return OffsetBox(tuple(float(L) + 2 * pad for L in lengths), tuple(-pad for _ in lengths))


def extended_grid(lengths: Sequence[float], params: MaternParams, factor: float, K) -> TensorGrid:
    box = extend_domain(lengths, params, factor)
    Ks = np.broadcast_to(np.atleast_1d(K), (len(lengths),))
    return TensorGrid(tuple(Grid1D(L, int(k), o) for L, k, o in zip(box.lengths, Ks, box.offsets)))


def grid_point_increment(L: float, rho: float, h: float) -> float:
    """Extra nodes in 2D when padding ``[0, L]^2`` by ``rho`` at fixed ``h``."""
    return ((L + 2 * rho) / h) ** 2 - (L / h) ** 2


# configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    D: int = 1
    L: float = 5.0
    s0: float = 2.0
    kappa0: float = 5.0
    s: Optional[float] = None
    kappa: Optional[float] = None
    N: List[int] = field(default_factory=lambda: [500])
    n_h: List[int] = field(default_factory=lambda: [2**k for k in range(4, 12)])
    noise: float = 0.1
    extension: float = 1.0
    J: Optional[int] = None
    seed: int = 0
    replicates: int = 10
    tolerance: float = 0.05
    lumped: bool = True
    threads: int = 1
    record_timings: bool = False

    def __post_init__(self):
        if self.s is None:
            self.s = self.s0
        if self.kappa is None:
            self.kappa = self.kappa0
        if self.J is None:
            self.J = 2000 if self.D == 1 else 200
        if self.D < 1:
            raise ConfigError("D must be positive")
        if self.extension < 0:
            raise ConfigError("extension must be nonnegative")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not self.N or any(n < 1 for n in self.N):
            raise ConfigError("N must list positive sample sizes")
        if not self.n_h or any(n < 2**self.D for n in self.n_h):
            raise ConfigError(f"each n_h must be at least {2**self.D}")
        if not self.L > 0:
            raise ConfigError("L must be positive")

    @property
    def model_params(self) -> MaternParams:
        return MaternParams(self.D, self.s, self.kappa)

    @property
    def truth_params(self) -> MaternParams:
        return MaternParams(self.D, self.s0, self.kappa0)

    def cells_per_dim(self, n_h: int) -> int:
        return max(1, int(round(n_h ** (1.0 / self.D))) - 1)


_LIST_KEYS = {"N", "n_h"}
_BOOL_KEYS = {"lumped", "record_timings"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists use commas."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _LIST_KEYS:
                values[key] = [int(float(v)) for v in val.split(",") if v.strip()]
            elif key in _BOOL_KEYS:
                values[key] = _parse_bool(val)
            elif key in ("D", "seed", "replicates", "threads", "J"):
                values[key] = int(val)
            else:
                values[key] = float(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, **overrides)


# sweep ---------------------------------------------------------------------


@dataclass
class ExperimentRecord:
    N: int
    n_h: int
    replicate: int
    error_fe: float
    error_cf: float
    wall_time_fe: Optional[float]
    wall_time_cf: Optional[float]
    seed: int
    extension_factor: float
    error: str = ""


CSV_COLUMNS = [f.name for f in fields(ExperimentRecord)]


def _cell_rng(seed: int, N: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(N, rep)))


def simulate_data(cfg: ExperimentConfig, N: int, rep: int):
    """Truth, design points and noisy responses for one sweep cell."""
    gen = _cell_rng(cfg.seed, N, rep)
    lengths = [cfg.L] * cfg.D
    truth = gen_truth(cfg.s0, cfg.kappa0, lengths, cfg.J, gen)
    X = gen.uniform(0.0, cfg.L, size=(N, cfg.D))
    f0 = truth(X)
    tau = cfg.noise * float(np.linalg.norm(f0)) / math.sqrt(N)
    y = f0 + tau * gen.standard_normal(N)
    return RegressionDataset(X, y, tau), f0


def _normalized_error(fhat, f0) -> float:
    return float(np.linalg.norm(fhat - f0) / math.sqrt(len(f0)))


def _run_cell(cfg: ExperimentConfig, N: int, rep: int) -> List[ExperimentRecord]:
    params = cfg.model_params
    data, f0 = simulate_data(cfg, N, rep)
    timer = time.perf_counter
    t0 = timer()
    try:
        err_cf = _normalized_error(regress_cf(data, params), f0)
        cf_msg = ""
    except FemGPError as exc:
        err_cf, cf_msg = math.nan, f"cf: {exc}"
    t_cf = timer() - t0
    out = []
    for n_h in cfg.n_h:
        K = cfg.cells_per_dim(n_h)
        msg = cf_msg
        t0 = timer()
        try:
            tg = extended_grid([cfg.L] * cfg.D, params, cfg.extension, K)
            P = precision_for_grid(params, tg, lumped=cfg.lumped)
            err_fe = _normalized_error(regress_fe(data, tg, P), f0)
            realized = tg.n_h
        except FemGPError as exc:
            err_fe, realized = math.nan, (K + 1) ** cfg.D
            msg = "; ".join(m for m in (msg, f"fe: {exc}") if m)
        t_fe = timer() - t0
        out.append(
            ExperimentRecord(
                N=N,
                n_h=realized,
                replicate=rep,
                error_fe=err_fe,
                error_cf=err_cf,
                wall_time_fe=t_fe if cfg.record_timings else None,
                wall_time_cf=t_cf if cfg.record_timings else None,
                seed=cfg.seed,
                extension_factor=cfg.extension,
                error=msg,
            )
        )
    return out


def run_sweep(cfg: ExperimentConfig) -> List[ExperimentRecord]:
    cells = [(N, rep) for N in sorted(cfg.N) for rep in range(cfg.replicates)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    else:
        chunks = [_run_cell(cfg, *c) for c in cells]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.N, r.n_h, r.replicate))
    return records


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def records_to_csv(records: Sequence[ExperimentRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        row = asdict(rec)
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


# thresholds ----------------------------------------------------------------


@dataclass(frozen=True)
class SweepSummary:
    N: int
    n_h: int
    error_fe: float
    error_cf: float
    spread_fe: float
    spread_cf: float
    replicates: int


def summarize(records: Sequence[ExperimentRecord]) -> List[SweepSummary]:
    """Replicate means and standard deviations per ``(N, n_h)``."""
    groups: Dict[tuple, list] = {}
    for r in records:
        groups.setdefault((r.N, r.n_h), []).append(r)
    out = []
    for (N, n_h), rs in sorted(groups.items()):
        fe = np.array([r.error_fe for r in rs], dtype=float)
        cf = np.array([r.error_cf for r in rs], dtype=float)
        sd = lambda a: float(np.std(a, ddof=1)) if len(a) > 1 else 0.0
        out.append(SweepSummary(N, n_h, float(np.mean(fe)), float(np.mean(cf)), sd(fe), sd(cf), len(rs)))
    return out


def detect_threshold(records: Sequence[ExperimentRecord], tolerance: float = 0.05) -> Dict[int, Optional[int]]:
    """Smallest ``n_h`` from which the mean FE error stays within
    ``(1 + tolerance)`` of the mean CF error; ``None`` if never reached."""
    by_N: Dict[int, List[SweepSummary]] = {}
    for row in summarize(records):
        by_N.setdefault(row.N, []).append(row)
    result: Dict[int, Optional[int]] = {}
    for N, rows in sorted(by_N.items()):
        if len(rows) < 3:
            raise InsufficientDataError(f"need at least three n_h values for N={N}, got {len(rows)}")
        ok = [r.error_fe <= (1 + tolerance) * r.error_cf for r in rows]
        star = None
        for k in range(len(rows) - 1, -1, -1):
            if not ok[k]:
                break
            star = rows[k].n_h
        result[N] = star
    return result
