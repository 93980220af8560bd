"""Render experiment results as figures next to the CSV output."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import Fig1Result, Fig2Result


def render_fig1(result: Fig1Result, path) -> None:
    """Mean log10 squared error vs log10 sample size, one line per method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in result.config.methods:
        pts = [
            (math.log10(T_d), mean)
            for m, T_d, mean in result.summary
            if m == method and math.isfinite(mean)
        ]
        if pts:
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("log10 sample size")
    ax.set_ylabel("log10 squared parameter error")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fig2(result: Fig2Result, path) -> None:
    """Box plot of expert-recovery error per number of jointly learned experts."""
    groups = []
    labels = []
    for m in result.config.group_sizes:
        errs = [r.error for r in result.records if r.label == str(m) and r.usable]
        if errs:
            groups.append(errs)
            labels.append(str(m))
    fig, ax = plt.subplots(figsize=(6, 4))
    if groups:
        ax.boxplot(groups, tick_labels=labels)
    ax.set_xlabel("experts learned jointly per stage")
    ax.set_ylabel("alignment error")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
