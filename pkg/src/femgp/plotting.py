"""Static figures written next to CSV output."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_sweep(summary, path, thresholds=None) -> Path:
    """FE and CF error against ``n_h``, one curve pair per ``N``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    Ns = sorted({row.N for row in summary})
    for k, N in enumerate(Ns):
        rows = [r for r in summary if r.N == N]
        n_h = np.array([r.n_h for r in rows])
        color = f"C{k}"
        ax.errorbar(n_h, [r.error_fe for r in rows], yerr=[r.spread_fe for r in rows],
                    color=color, marker="o", ms=3, capsize=2, label=f"FE, N={N}")
        ax.axhline(rows[0].error_cf, color=color, ls="--", lw=1, label=f"CF, N={N}")
        ax.axvline(N, color=color, ls=":", lw=0.8)
        if thresholds and thresholds.get(N) is not None:
            ax.plot([thresholds[N]], [rows[0].error_cf], marker="*", ms=10, color=color)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("number of grid points $n_h$")
    ax.set_ylabel("normalized error")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_rates(h: Sequence[float], series: dict, path, title: str = "") -> Path:
    """Log-log error curves; ``series`` maps a label to ``(values, slope)``."""
    fig, ax = plt.subplots(figsize=(5, 4))
    h = np.asarray(h)
    for label, (vals, slope) in series.items():
        ax.loglog(h, vals, marker="o", ms=3, label=f"{label} (slope {slope:.2f})")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)
