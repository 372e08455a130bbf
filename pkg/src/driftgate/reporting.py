"""Figure rendering for the report path.

All figures go to files (Agg backend); nothing opens a window. The report
command writes them next to the delimited summary so a run directory is
reviewable without re-executing anything.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (9, 4.5)
DPI = 120


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_equity_figure(timestamps, equity, path, title: str = "Equity curve") -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(timestamps, equity, lw=1.2, color="#1f77b4")
    ax.set_title(title)
    ax.set_ylabel("equity")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def save_drawdown_figure(timestamps, equity, path, title: str = "Drawdown") -> Path:
    equity = np.asarray(equity, dtype=np.float64)
    peak = np.maximum.accumulate(equity)
    drawdown = 1.0 - equity / peak
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.fill_between(timestamps, -drawdown, 0.0, color="#d62728", alpha=0.5)
    ax.set_title(title)
    ax.set_ylabel("drawdown")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def save_cost_sweep_figure(levels, net_pnls, path, title: str = "Cost sweep") -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(levels, net_pnls, marker="o", color="#2ca02c")
    ax.set_title(title)
    ax.set_xlabel("cost (bps)")
    ax.set_ylabel("net PnL")
    ax.set_xscale("symlog", linthresh=0.1)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def save_score_figure(scorecard_dict, path, title: str = "Scorecard") -> Path:
    dims = ["D1", "D2", "D3", "D4"]
    values = [scorecard_dict.get(d, 0.0) for d in dims]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(dims, values, color="#1f77b4")
    ax.axhline(0.85, color="#d62728", ls="--", lw=1, label="target 0.85")
    ax.set_ylim(0, 1.05)
    ax.bar_label(bars, fmt="%.2f")
    ax.set_title(title)
    ax.legend()
    return _finish(fig, path)
