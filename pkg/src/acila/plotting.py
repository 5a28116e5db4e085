"""Figures for run reports. Rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import RunReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

COLORS = {"escc": "#4c72b0", "escs": "#dd8452", "ess": "#55a868", "el": "#c44e52", "es": "#4c72b0"}


def _bar_labels(ax, bars):
    for b in bars:
        ax.annotate(f"{int(b.get_height()):,}", (b.get_x() + b.get_width() / 2, b.get_height()),
                    ha="center", va="bottom", fontsize=7)


def spine_figure(report: RunReport, path: Path) -> Path:
    e = report.entries
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 2.6))
        bars = ax.bar(["conventional (el)", "Service-based (es)"], [e.el, e.es],
                      color=[COLORS["el"], COLORS["es"]], width=0.6)
        if e.el > 0 and e.es > 0:
            ax.set_yscale("log")
        ax.set_ylabel("entries per spine switch")
        ax.set_title(report.scenario)
        _bar_labels(ax, bars)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def gateway_figure(report: RunReport, path: Path) -> Path:
    gws = list(report.entries.gateways)  # topology order
    counts = [report.entries.gateways[g] for g in gws]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.2, 0.25 * len(gws) + 1.5), 2.6))
        bottom = [0] * len(gws)
        for m in ("escc", "escs", "ess"):
            vals = [getattr(c, m) for c in counts]
            ax.bar(gws, vals, bottom=bottom, label=m, color=COLORS[m], width=0.7)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylabel("entries per SACL Gateway")
        ax.set_xlabel("gateway")
        ax.tick_params(axis="x", rotation=90)
        ax.legend(frameon=False, ncol=3, loc="upper center", bbox_to_anchor=(0.5, 1.18))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_figures(report: RunReport, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.scenario.replace("/", "_")
    paths = [spine_figure(report, out / f"{stem}_spine_entries.png")]
    if report.entries.gateways:
        paths.append(gateway_figure(report, out / f"{stem}_gateway_entries.png"))
    return paths
