"""Matplotlib renderings of the experiment reports.

Every CLI report path writes a figure next to its delimited output: log-log
convergence plots for the pendulum studies, error-vs-depth curves for
manifestation sweeps, and loss/accuracy curves with refinement markers for
training runs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import ConvergenceTable, ManifestationReport
from .training import TrainResult

_FIG_KW = {"dpi": 150, "bbox_inches": "tight"}


def convergence_figure(tables: list[ConvergenceTable], path: str, title: str = "") -> None:
    """Global error against inference step size, one line per table."""
    fig, ax = plt.subplots(figsize=(5.2, 3.9))
    for table in tables:
        dts = [r.dt for r in table.rows]
        errs = [r.error for r in table.rows]
        label = table.label
        if np.isfinite(table.slope):
            label += f" (slope {table.slope:.2f})"
        style = "--" if table.label.startswith("true-rhs") else "-"
        ax.loglog(dts, errs, style, marker="o", markersize=3.5, label=label)
    ax.set_xlabel(r"inference $\Delta t$")
    ax.set_ylabel("global error at final time")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)


def sweep_figure(report: ManifestationReport, path: str) -> None:
    """Test error against step count, one line per evaluation scheme."""
    fig, ax = plt.subplots(figsize=(5.2, 3.9))
    schemes = sorted({c.eval_scheme for c in report.cells})
    for scheme in schemes:
        cells = sorted((c for c in report.cells if c.eval_scheme == scheme),
                       key=lambda c: c.num_steps)
        ax.plot([c.num_steps for c in cells], [c.error for c in cells],
                marker="o", markersize=4, label=f"eval {scheme}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel(r"steps $N_t$")
    ax.set_ylabel("test error")
    ax.set_title(f"manifestations of a model trained with {report.train_scheme}")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)


def training_figure(result: TrainResult, path: str) -> None:
    """Loss and accuracy per epoch; vertical lines mark refinement events."""
    epochs = [m.epoch for m in result.metrics]
    losses = [m.loss for m in result.metrics]
    accs = [m.accuracy for m in result.metrics]
    has_acc = any(np.isfinite(a) for a in accs)
    fig, axes = plt.subplots(2 if has_acc else 1, 1, figsize=(5.2, 4.6), sharex=True)
    axes = np.atleast_1d(axes)
    axes[0].semilogy(epochs, losses, color="tab:blue")
    axes[0].set_ylabel("training loss")
    axes[0].grid(True, alpha=0.3)
    if has_acc:
        axes[1].plot(epochs, accs, color="tab:orange")
        axes[1].set_ylabel("test accuracy")
        axes[1].grid(True, alpha=0.3)
    for ax in axes:
        for ev in result.events:
            ax.axvline(ev.epoch, color="gray", linestyle=":", linewidth=1)
    axes[-1].set_xlabel("epoch")
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)
