"""Static figure rendering for simulation and analysis reports.

Figures are written next to the delimited outputs; nothing here is
interactive.  The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .report import AnalysisReport  # noqa: E402
from .simulate import SimulationReport  # noqa: E402

_COLORS = {"PI": "tab:blue", "PPI": "tab:blue",
           "RS": "tab:red", "PRS": "tab:red"}
_DPI = 150


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata={"Software": "privstream"})
    plt.close(fig)


def save_cp_al_figure(report: SimulationReport, path) -> None:
    """Coverage and average length against the stream length."""
    level = report.design.levels[0]
    eval_ns = list(report.design.eval_ns)
    fig, (ax_cp, ax_al) = plt.subplots(2, 1, figsize=(6.4, 7.0), sharex=True)
    for label in sorted(set(report.methods.values())):
        cps = [report.row(label, n, level).cp * 100 for n in eval_ns]
        als = [report.row(label, n, level).al for n in eval_ns]
        color = _COLORS.get(label)
        ax_cp.plot(eval_ns, cps, "o-", label=label, color=color)
        ax_al.plot(eval_ns, als, "o-", label=label, color=color)
    ax_cp.axhline(100 * level, color="gray", ls="--", lw=1,
                  label=f"nominal {100 * level:g}%")
    ax_cp.set_ylabel("coverage probability (%)")
    ax_cp.legend(frameon=False)
    ax_al.set_ylabel("average interval length")
    ax_al.set_xlabel("cumulative sample size n")
    ax_al.set_yscale("log")
    fig.suptitle(f"family={report.design.family}, mu={report.design.mu}, "
                 f"p={report.design.p}")
    fig.tight_layout()
    _save(fig, path)


def save_coverage_vs_nominal_figure(report: SimulationReport, path) -> None:
    """Empirical coverage against the nominal level (level-sweep runs)."""
    n_final = report.design.eval_ns[-1]
    levels = np.asarray(report.design.levels)
    fig, ax = plt.subplots(figsize=(5.6, 5.2))
    for label in sorted(set(report.methods.values())):
        cps = [report.row(label, n_final, l).cp for l in levels]
        ax.plot(levels, cps, "o-", label=label, color=_COLORS.get(label))
    lo = min(levels.min(), min(r.cp for r in report.summary)) - 0.01
    ax.plot([lo, 1], [lo, 1], color="gray", ls="--", lw=1, label="nominal")
    ax.set_xlabel("nominal coverage 1 - alpha")
    ax.set_ylabel("empirical coverage")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def save_trajectory_figure(analysis: AnalysisReport, path) -> None:
    """Per-coefficient trajectories of the averaged iterate with both
    confidence bands along the checkpoint grid."""
    fit = analysis.fit
    labels = analysis.labels()
    names = analysis.columns
    d = len(names)
    ncols = min(3, d)
    nrows = math.ceil(d / ncols)
    fig, axes = plt.subplots(nrows, ncols,
                             figsize=(3.6 * ncols, 2.8 * nrows),
                             squeeze=False, sharex=True)
    ns = list(fit.eval_ns)
    li = 0  # first configured level
    for j, name in enumerate(names):
        ax = axes[j // ncols][j % ncols]
        est = fit.theta_bar[:, j]
        ax.plot(ns, est, color="black", lw=1.4, label="estimate")
        for kind, label in labels.items():
            bounds = fit.intervals[kind]
            ax.fill_between(ns, bounds[:, li, j, 0], bounds[:, li, j, 1],
                            alpha=0.25, color=_COLORS.get(label),
                            label=label)
        ax.axhline(0.0, color="gray", lw=0.6, ls=":")
        ax.set_title(name, fontsize=9)
    for j in range(d, nrows * ncols):
        axes[j // ncols][j % ncols].set_axis_off()
    axes[0][0].legend(frameon=False, fontsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("n")
    fig.tight_layout()
    _save(fig, path)
