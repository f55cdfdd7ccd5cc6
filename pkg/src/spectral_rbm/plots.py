"""Figure rendering for the report paths.

Renders PNG figures next to the delimited outputs: reconstruction-error
curves from a metrics CSV, and a slack overview from a bound-report CSV.
The CSV files stay the canonical interface; figures are a convenience view.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_metrics_figure(metrics_csv, out_png) -> Path:
    """Two-panel training report: reconstruction SSE and step size / gradient."""
    rows = _read_csv(metrics_csv)
    if not rows:
        raise ValueError(f"no rows in {metrics_csv}")
    iters = [int(r["iter"]) for r in rows]
    train = [float(r["train_recon_sse"]) for r in rows]
    test = [float(r["test_recon_sse"]) for r in rows]
    steps = [float(r["step_size"]) for r in rows]
    nucs = [float(r["grad_w_nuclear"]) for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(iters, train, label="train", lw=1.5)
    if not all(math.isnan(t) for t in test):
        ax1.plot(iters, test, label="test", lw=1.5, ls="--")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("reconstruction SSE")
    ax1.set_yscale("log")
    ax1.legend()
    ax1.grid(alpha=0.3)

    ax2.plot(iters, nucs, color="tab:green", lw=1.2, label="grad W nuclear norm")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("gradient nuclear norm", color="tab:green")
    ax3 = ax2.twinx()
    ax3.plot(iters, steps, color="tab:orange", lw=1.2, label="step size")
    ax3.set_ylabel("step size", color="tab:orange")
    ax2.grid(alpha=0.3)

    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_bounds_figure(report_csv, out_png) -> Path:
    """Bar chart of minimum slack per verified bound (log scale)."""
    rows = _read_csv(report_csv)
    if not rows:
        raise ValueError(f"no rows in {report_csv}")
    names = [r["bound_id"] for r in rows]
    slacks = [max(float(r["min_slack"]), 0.0) for r in rows]
    violations = [int(r["violations"]) for r in rows]

    fig, ax = plt.subplots(figsize=(9, 4.5))
    colors = ["tab:red" if v else "tab:blue" for v in violations]
    ax.barh(names, [s if s > 0 else 1e-18 for s in slacks], color=colors)
    ax.set_xscale("log")
    ax.set_xlabel("minimum slack over trials")
    ax.invert_yaxis()
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
