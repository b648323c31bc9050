"""Figure rendering for the report paths.

Every CLI report that writes a delimited file also renders a small
matplotlib figure next to it.  The Agg backend keeps this headless, and
savefig metadata is pinned so repeated runs produce byte-identical images.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_verify_figure",
    "render_trace_figure",
    "render_bench_figure",
    "render_metrics_figure",
]

_PNG_METADATA = {"Software": "privrec"}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def render_verify_figure(reports, path: str | Path) -> None:
    """Observed value vs bound for each check, log scale."""
    names = [r.name for r in reports]
    observed = np.array([max(r.observed, 1e-12) for r in reports])
    bounds = np.array([max(r.bound, 1e-12) for r in reports])
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(names), 4.2))
    ax.bar(x - 0.18, observed, width=0.36, label="observed")
    ax.bar(x + 0.18, bounds, width=0.36, label="bound")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    for i, r in enumerate(reports):
        ax.text(
            i,
            max(observed[i], bounds[i]) * 1.1,
            "ok" if r.passed else "FAIL",
            ha="center",
            fontsize=8,
            color="green" if r.passed else "red",
        )
    ax.set_ylabel("value (log)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_trace_figure(trace, path: str | Path) -> None:
    """Per-epoch loss components of a training run."""
    epochs = [row["epoch"] for row in trace]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for key in ("l_rec", "l_reg", "l_ali", "total"):
        series = [row[key] for row in trace]
        if any(v != 0 for v in series):
            ax.plot(epochs, series, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_bench_figure(rows, path: str | Path) -> None:
    """Log-log timing curves per transform."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    kinds = sorted({row["transform"] for row in rows})
    for kind in kinds:
        pts = [(row["n1"], row["seconds"]) for row in rows if row["transform"] == kind]
        pts.sort()
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], marker="o", label=kind)
    ax.set_xlabel("item dimension")
    ax.set_ylabel("seconds per transform")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_metrics_figure(rows, path: str | Path) -> None:
    """Grouped bars of the ranking metrics, one group per run."""
    columns = ["hr@5", "ndcg@5", "mrr@5", "hr@10", "ndcg@10", "mrr@10"]
    labels = [label for label, _ in rows]
    x = np.arange(len(columns))
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for k, (label, values) in enumerate(rows):
        ax.bar(
            x + (k - (len(rows) - 1) / 2) * width,
            [values[c] for c in columns],
            width=width,
            label=label,
        )
    ax.set_xticks(x)
    ax.set_xticklabels(columns, fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("metric")
    if len(labels) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
