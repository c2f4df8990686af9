"""Figure rendering for experiment directories: average-error curves and
timing bars, written as PNG next to the CSV output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import load_summary  # noqa: E402

LABELS = {
    "nominal": "Nominal MPC",
    "koopman": "Koopman MPC (frozen)",
    "adaptive_koopman": "Adaptive Koopman MPC",
    "rff": "RFF-MPC",
}


def plot_error_curves(summary_path, out_path, title="Average tracking error"):
    names, t, curves = load_summary(summary_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in names:
        ax.plot(t, curves[name], label=LABELS.get(name, name))
    ax.set_xlabel("time [s]")
    ax.set_ylabel(r"mean $\|x_k - x^{ref}_k\|_2$")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_timing(timing_path, out_path):
    with open(timing_path) as f:
        timing = json.load(f)
    names = [n for n, d in timing.items() if d.get("episodes")]
    if not names:
        return
    means = [timing[n]["episode_mean_s"] for n in names]
    stds = [timing[n]["episode_std_s"] for n in names]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(range(len(names)), means, yerr=stds, capsize=4,
           tick_label=[LABELS.get(n, n) for n in names])
    ax.set_ylabel("episode wall time [s]")
    ax.set_title("MPC execution time per episode")
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_report(exp_dir):
    """Render all figures for a run or sweep directory; returns paths."""
    exp_dir = Path(exp_dir)
    written = []
    targets = [exp_dir] + sorted(exp_dir.glob("pct_*"))
    for d in targets:
        summary = d / "summary.csv"
        timing = d / "timing.json"
        if summary.exists():
            out = d / "error_curves.png"
            title = "Average tracking error"
            if d.name.startswith("pct_"):
                title += f" ({float(d.name[4:]) * 100:.0f}% mismatch)"
            plot_error_curves(summary, out, title=title)
            written.append(out)
        if timing.exists():
            out = d / "timing.png"
            plot_timing(timing, out)
            written.append(out)
    return written
