"""Figure rendering for training and evaluation reports.

Figures are written to files next to the delimited outputs; nothing here is
interactive, so the Agg backend is forced before pyplot loads.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ocdl.dict_space import EvalReport
from ocdl.persist import read_metrics


def render_training_figure(metrics_path, out_path) -> None:
    """Plot objective and timing trajectories from a training metrics CSV."""
    rows = read_metrics(metrics_path)
    if not rows:
        raise ValueError(f"no metrics rows in {metrics_path}")
    idx = [r.sample_index for r in rows]
    fig, (ax_obj, ax_time) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_obj.plot(idx, [r.csc_objective for r in rows], "o-", label="coding objective")
    ax_obj.plot(
        idx, [r.approx_fit_term for r in rows], "s--", label="dictionary fit term"
    )
    ax_obj.set_ylabel("objective")
    ax_obj.legend(loc="best")
    ax_obj.grid(True, alpha=0.3)
    ax_time.bar(idx, [r.wall_time_seconds for r in rows], color="tab:gray")
    ax_time.set_ylabel("seconds per sample")
    ax_time.set_xlabel("sample")
    ax_time.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_eval_figure(report: EvalReport, out_path) -> None:
    """Bar chart of per-image objectives with the mean marked."""
    values = report.per_image_objective
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(values)), values, color="tab:blue")
    ax.axhline(
        report.mean_objective,
        color="tab:red",
        linestyle="--",
        label=f"mean = {report.mean_objective:.4g}",
    )
    ax.set_xlabel("image")
    ax.set_ylabel("coding objective")
    ax.legend(loc="best")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
