"""Render training-trace and benchmark CSVs to PNG figures.

The CSVs stay the machine-readable record; these renderers exist so a run
can be eyeballed without leaving the terminal workflow. Backend is forced
to Agg, so rendering works headless.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .trainer import read_trace_csv


def render_trace_figure(trace_path: str, out_path: str) -> str:
    """Plot empirical loss and kernel score against iteration."""
    points, config = read_trace_csv(trace_path)
    if not points:
        raise ValueError(f"{trace_path}: no trace points to plot")
    its = [p.iteration for p in points]
    loss = [p.empirical_loss for p in points]
    score = [p.mmd_score for p in points]

    fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0))
    axes[0].plot(its, loss, color="tab:blue")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("empirical loss")
    axes[0].grid(alpha=0.3)
    if min(score) > 0.0:
        axes[1].semilogy(its, score, color="tab:red")
    else:
        axes[1].plot(its, score, color="tab:red")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("kernel two-sample score")
    axes[1].grid(alpha=0.3)
    if config is not None:
        fig.suptitle(
            f"algorithm={config.get('algorithm')} K={config.get('batch_K')} "
            f"mu={config.get('mu')} h={config.get('bandwidth_h')}"
        )
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def _read_bench(path: str):
    err: dict[str, tuple[list, list]] = {}
    rel: dict[str, tuple[list, list]] = {}
    with open(path, "r") as fh:
        reader = csv.DictReader(fh)
        needed = {"sample_index", "variant", "err_power", "rel_diff_power"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ValueError(f"{path}: not a benchmark CSV (header {reader.fieldnames})")
        for row in reader:
            t = int(row["sample_index"])
            lab = row["variant"]
            err.setdefault(lab, ([], []))
            err[lab][0].append(t)
            err[lab][1].append(float(row["err_power"]))
            if row["rel_diff_power"] not in ("", None):
                rel.setdefault(lab, ([], []))
                rel[lab][0].append(t)
                rel[lab][1].append(float(row["rel_diff_power"]))
    if not err:
        raise ValueError(f"{path}: no benchmark rows to plot")
    return err, rel


def render_bench_figure(bench_path: str, out_path: str) -> str:
    """Plot estimation-error power per variant and the difference series."""
    err, rel = _read_bench(bench_path)
    ncols = 2 if rel else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.0 * ncols, 4.0), squeeze=False)
    ax = axes[0][0]
    for lab, (ts, vals) in err.items():
        if min(vals) > 0.0:
            ax.semilogy(ts, vals, label=lab)
        else:
            ax.plot(ts, vals, label=lab)
    ax.set_xlabel("samples consumed")
    ax.set_ylabel("estimation error power")
    ax.grid(alpha=0.3)
    ax.legend()
    if rel:
        ax = axes[0][1]
        for lab, (ts, vals) in rel.items():
            ax.plot(ts, vals, label=f"vs {lab}")
        ax.set_xlabel("samples consumed")
        ax.set_ylabel("relative difference power")
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
