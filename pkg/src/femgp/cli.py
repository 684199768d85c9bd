"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
numerical failures. Commands that write a CSV with ``--out`` also render
an SVG figure next to it unless ``--no-plot`` is given.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, FemGPError
from .fem import TensorGrid
from .fields import coupled_error_mc, precision_for_grid
from .harness import (
    detect_threshold,
    extended_grid,
    load_config,
    parse_config,
    records_to_csv,
    run_sweep,
    summarize,
)
from .inference import ClassificationDataset, RegressionDataset, classify_map, regress_cf, regress_fe
from .matern import MaternParams
from .scaling import recommend_h
from .spectral import loglog_slope, spectral_error_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ints(text: str) -> List[int]:
    return [int(v) for v in _floats(text)]


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _figure_path(out: Optional[str], args) -> Optional[Path]:
    if not out or args.no_plot:
        return None
    return Path(out).with_suffix(".svg")


# subcommands ---------------------------------------------------------------


def cmd_sweep(args) -> int:
    overrides = {"seed": args.seed, "threads": args.threads}
    cfg = load_config(args.config, **overrides) if args.config else parse_config("", **overrides)
    records = run_sweep(cfg)
    _emit(records_to_csv(records), args.out)
    thresholds = detect_threshold(records, cfg.tolerance) if len(cfg.n_h) >= 3 else {}
    for N, star in thresholds.items():
        print(f"N={N}: n_h*={'not reached' if star is None else star}", file=sys.stderr)
    fig = _figure_path(args.out, args)
    if fig:
        from .plotting import plot_sweep

        plot_sweep(summarize(records), fig, thresholds)
    return EXIT_OK


def cmd_recommend(args) -> int:
    lengths = args.L if args.L else None
    if lengths is not None and len(lengths) == 1 and args.D > 1:
        lengths = lengths * args.D
    rec = recommend_h(args.task, args.s, args.D, args.N, args.c, lengths)
    if args.c == 1.0:
        print("warning: c=1 is uncalibrated; the constant grows with kappa and the domain size", file=sys.stderr)
    row = rec.row()
    _emit(_table(list(row), [list(row.values())]), args.out)
    return EXIT_OK


def cmd_certify_spectral(args) -> int:
    h_list = [args.L / K for K in args.K]
    table = spectral_error_report(args.L, h_list, args.i_max)
    rows = [list(r.values()) for r in table.rows()]
    header = ["h", "max_eigval_relerr", "max_eigfun_inferr", "slope_running"]
    _emit(_table(header, rows), args.out)
    print(f"eigenvalue slope {table.eigval_slope:.3f}, eigenfunction slope {table.eigfun_slope:.3f}", file=sys.stderr)
    fig = _figure_path(args.out, args)
    if fig:
        from .plotting import plot_rates

        plot_rates(table.h, {
            "eigenvalues": (table.eigval_relerr, table.eigval_slope),
            "eigenfunctions": (table.eigfun_inferr, table.eigfun_slope),
        }, fig, "FE Neumann eigenpairs")
    return EXIT_OK


def cmd_certify_field_error(args) -> int:
    params = MaternParams(args.D, args.s, args.kappa)
    lengths = [args.L] * args.D
    rows, hs, vals = [], [], []
    for K in args.K:
        tg = TensorGrid.uniform(lengths, K)
        est = coupled_error_mc(params, tg, n_rep=args.reps, norm=args.norm, rng=args.seed)
        rows.append([tg.h, args.norm, est.mean_sq_error, est.stderr, est.tail_bound, est.n_rep, args.seed])
        hs.append(tg.h)
        vals.append(est.total)
    header = ["h", "norm", "mean_sq_error", "stderr", "tail_bound", "n_rep", "seed"]
    _emit(_table(header, rows), args.out)
    slope = loglog_slope(hs, vals) if len(hs) >= 2 else math.nan
    print(f"{args.norm} slope {slope:.3f}", file=sys.stderr)
    fig = _figure_path(args.out, args)
    if fig:
        from .plotting import plot_rates

        plot_rates(hs, {f"E||u_h - u||^2 ({args.norm})": (np.array(vals), slope)}, fig, "FE field error")
    return EXIT_OK


def _read_xy(path: str):
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from exc
    if arr.shape[1] < 2:
        raise ConfigError("data rows must read x1,...,xD,y")
    return arr[:, :-1], arr[:, -1]


def _read_points(path: Optional[str], D: int):
    if path is None:
        return None
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2).reshape(-1, D)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read evaluation points {path}: {exc}") from exc


def _model_grid(args, D: int):
    params = MaternParams(D, args.s, args.kappa)
    lengths = [args.L] * D
    return params, extended_grid(lengths, params, args.extension, args.K)


def cmd_regress(args) -> int:
    X, y = _read_xy(args.data)
    D = X.shape[1]
    data = RegressionDataset(X, y, args.tau)
    pts = _read_points(args.eval, D)
    params = MaternParams(D, args.s, args.kappa)
    if args.method == "cf":
        pred = regress_cf(data, params, eval_points=pts)
    else:
        _, tg = _model_grid(args, D)
        pred = regress_fe(data, tg, precision_for_grid(params, tg), eval_points=pts)
    where = X if pts is None else pts
    header = [f"x{d + 1}" for d in range(D)] + ["f_hat"]
    _emit(_table(header, [list(map(float, p)) + [float(v)] for p, v in zip(where, pred)]), args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    from scipy.special import expit

    from .fem import design_matrix

    X, y = _read_xy(args.data)
    D = X.shape[1]
    data = ClassificationDataset(X, y)
    params, tg = _model_grid(args, D)
    w = classify_map(data, tg, precision_for_grid(params, tg))
    pts = _read_points(args.eval, D)
    where = X if pts is None else pts
    prob = expit(design_matrix(tg, where) @ w)
    header = [f"x{d + 1}" for d in range(D)] + ["p_hat"]
    _emit(_table(header, [list(map(float, p)) + [float(v)] for p, v in zip(where, prob)]), args.out)
    return EXIT_OK


# parser --------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="femgp", description="FE approximations of Matérn-type Gaussian processes")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--out", help="output CSV path (default: stdout)")
        p.add_argument("--no-plot", action="store_true", help="skip the SVG figure next to --out")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("sweep", help="CF versus FE regression sweep over n_h")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--threads", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("recommend", help="recommended mesh size for N observations")
    p.add_argument("--task", choices=["regression", "classification"], required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--L", type=_floats, default=None, help="domain length(s), comma separated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("certify-spectral", help="FE eigenpair error rates in 1D")
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--K", type=_ints, default=[32, 64, 128, 256, 512])
    p.add_argument("--i-max", type=int, default=10)
    common(p, seed=False)
    p.set_defaults(func=cmd_certify_spectral)

    p = sub.add_parser("certify-field-error", help="coupled Monte Carlo FE field error")
    p.add_argument("--D", type=int, default=1)
    p.add_argument("--s", type=float, default=2.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--K", type=_ints, default=[8, 16, 32, 64])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--norm", choices=["L2", "Linf"], default="L2")
    common(p)
    p.set_defaults(func=cmd_certify_field_error)

    for name, func, helptext in (
        ("regress", cmd_regress, "posterior mean regression from CSV data"),
        ("classify", cmd_classify, "logistic MAP classification from CSV data"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="CSV rows x1,...,xD,y")
        p.add_argument("--eval", help="CSV of evaluation points (default: the data points)")
        p.add_argument("--s", type=float, default=2.0)
        p.add_argument("--kappa", type=float, default=1.0)
        p.add_argument("--L", type=float, required=True, help="data live in [0, L]^D")
        p.add_argument("--K", type=int, default=64, help="cells per dimension")
        p.add_argument("--extension", type=float, default=1.0)
        p.add_argument("--out")
        if name == "regress":
            p.add_argument("--tau", type=float, required=True)
            p.add_argument("--method", choices=["fe", "cf"], default="fe")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and args.command == "certify-field-error":
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FemGPError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
