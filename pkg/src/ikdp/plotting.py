"""Matplotlib figures written next to CSV reports (``report.csv`` -> ``report.png``)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}
_COLORS = ("#1f3a93", "#c0392b", "#27ae60", "#8e44ad")


def sidecar(path) -> Path:
    return Path(path).with_suffix(".png")


def _save(fig, path) -> Path:
    out = Path(path)
    # no Software/date chunks, so reruns are byte-identical
    fig.savefig(out, format="png", metadata={"Software": None})
    plt.close(fig)
    return out


def plot_training_curves(rows, path) -> Path:
    """Loss per step and probe tip distance per evaluation, side by side."""
    with plt.rc_context(_RC):
        fig, (ax_d, ax_l) = plt.subplots(1, 2, figsize=(8, 3))
        steps = [r.step for r in rows]
        ax_l.plot(steps, [r.loss for r in rows], color=_COLORS[0], lw=0.6)
        ax_l.set(xlabel="step", ylabel="loss", title="training loss")
        evals = [r for r in rows if r.dist is not None]
        ax_d.plot([r.step for r in evals], [r.dist for r in evals], color=_COLORS[1], marker=".", lw=0.8)
        ax_d.set(xlabel="step", ylabel="tip distance", title="training distance")
        return _save(fig, path)


def plot_bench(rows: Sequence[dict], path) -> Path:
    with plt.rc_context(_RC):
        fig, (ax_d, ax_t) = plt.subplots(1, 2, figsize=(7, 3))
        labels = [r["solver"] for r in rows]
        colors = _COLORS[: len(rows)]
        ax_d.bar(labels, [r["mean_target_distance"] for r in rows], color=colors)
        ax_d.set(ylabel="mean target distance")
        ax_t.bar(labels, [r["mean_seconds_per_solve"] for r in rows], color=colors)
        ax_t.set(ylabel="seconds per solve")
        return _save(fig, path)


def plot_sweep(rows: Sequence[dict], key: str, path) -> Path:
    """Median metrics against the swept quantity (joint count or timesteps)."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3))
        xs = [r[key] for r in rows]
        for ax, metric, color in zip(axes, ("angle_distance", "target_distance"), _COLORS):
            ax.plot(xs, [r[metric] for r in rows], marker="o", color=color)
            ax.set(xlabel=key, ylabel=f"median {metric.replace('_', ' ')}", xticks=xs)
        return _save(fig, path)


def plot_eval(target_distances, path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.hist(target_distances, bins=30, color=_COLORS[0])
        ax.set(xlabel="target distance", ylabel="count")
        return _save(fig, path)
