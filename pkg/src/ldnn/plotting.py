"""Static SVG figures: predicted curve over simulated median and IQR band."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ldnn import TOOL_NAME, __version__  # noqa: E402
from ldnn.experiments import ComparisonReport  # noqa: E402
from ldnn.io import atomic_write_text  # noqa: E402


def comparison_figure(report: ComparisonReport, title: str | None = None):
    """One log-scale panel per metric; the caller owns (and closes) the figure."""
    metrics = sorted({r.metric for r in report.rows})
    fig, axes = plt.subplots(1, max(len(metrics), 1), figsize=(5 * max(len(metrics), 1), 4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        rows = [r for r in report.rows if r.metric == metric]
        pred = [(r.t, r.predicted) for r in rows if r.predicted is not None]
        emp = [(r.t, r.median, r.p25, r.p75) for r in rows if r.median is not None]
        if emp:
            ts, med, lo, hi = zip(*emp)
            ax.fill_between(ts, lo, hi, alpha=0.25, color="C0", label="IQR (simulation)")
            ax.plot(ts, med, "+", color="C0", markersize=10, label="median (simulation)")
        if pred:
            ts, vals = zip(*pred)
            ax.plot(ts, vals, "-", color="C1", label="prediction")
        ax.set_yscale("log")
        ax.set_xlabel("iteration t")
        ax.set_ylabel(metric)
        ax.legend(fontsize=8)
    fig.suptitle(title or f"{TOOL_NAME} {__version__}  config {report.config_hash}", fontsize=9)
    fig.tight_layout()
    return fig


def comparison_svg(report: ComparisonReport, path: str | Path, title: str | None = None) -> None:
    """Write a self-contained SVG (glyphs as paths, no external references)."""
    with plt.rc_context({"svg.fonttype": "path", "svg.hashsalt": "ldnn"}):
        fig = comparison_figure(report, title)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": f"{TOOL_NAME} {__version__}",
                                                  "Description": f"config_hash={report.config_hash}"})
        plt.close(fig)
    atomic_write_text(path, buf.getvalue())
