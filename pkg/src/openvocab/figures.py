"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport

__all__ = [
    "save_category_accuracy_figure",
    "save_rank_frequency_figure",
    "save_sweep_figure",
]

_CATEGORY_ORDER = ("base", "common", "rare", "unseen", "total")


def _finish(fig, path: str, note: str | None) -> None:
    if note:
        fig.text(0.99, 0.01, note, ha="right", va="bottom", fontsize=6, color="gray")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_category_accuracy_figure(report: EvalReport, path: str, note: str | None = None) -> None:
    """Bar chart of per-category accuracy plus total and macc."""
    labels, values = [], []
    for cat in _CATEGORY_ORDER:
        acc = report.acc_total if cat == "total" else report.accuracy(cat)
        if acc is not None:
            labels.append(cat)
            values.append(acc)
    if report.macc is not None:
        labels.append("macc")
        values.append(report.macc)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.bar(labels, values, color="#4878a8")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    for i, v in enumerate(values):
        ax.text(i, v + 1.5, f"{v:.1f}", ha="center", fontsize=8)
    _finish(fig, path, note)


def save_rank_frequency_figure(frequencies: Sequence[int], path: str, note: str | None = None) -> None:
    """Training-frequency long-tail curve, log-scaled y axis."""
    freqs = sorted((f for f in frequencies if f > 0), reverse=True)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(range(1, len(freqs) + 1), freqs, lw=1.5, color="#a85448")
    ax.set_yscale("log")
    ax.set_xlabel("answer rank")
    ax.set_ylabel("training frequency")
    _finish(fig, path, note)


def save_sweep_figure(
    epsilons: Sequence[float],
    series: dict[str, Sequence[float | None]],
    path: str,
    note: str | None = None,
) -> None:
    """Metric curves over the epsilon grid."""
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for name, values in series.items():
        xs = [e for e, v in zip(epsilons, values) if v is not None]
        ys = [v for v in values if v is not None]
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=8)
    _finish(fig, path, note)
