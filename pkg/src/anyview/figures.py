"""Matplotlib renderings of metric reports, saved next to the JSON output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_accuracy_curve(taus, curve, auc_value):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(taus, curve, marker="o", ms=3)
    ax.set_xlabel("threshold [deg]")
    ax.set_ylabel("min(RRA, RTA) accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"pose accuracy curve (AUC = {auc_value:.3f})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def plot_value_bars(values: dict, title: str, log: bool = False):
    keys = list(values)
    vals = [values[k] for k in keys]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(keys) + 1.5), 3.5))
    ax.bar(range(len(keys)), vals, color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=30, ha="right", fontsize=8)
    if log:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return fig


def plot_spectrum(eigenvalues):
    vals = np.asarray(eigenvalues, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.bar(range(1, len(vals) + 1), vals, color="#a85448")
    ax.set_xticks(range(1, len(vals) + 1))
    ax.set_xlabel("principal component")
    ax.set_ylabel("normalized variance")
    ax.set_ylim(0, 1.05)
    ax.set_title("camera-center variance spectrum")
    fig.tight_layout()
    return fig


def save_figure(fig, path) -> None:
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_report_figure(report: dict, path) -> None:
    """Pick a sensible rendering for a report produced by the CLI."""
    command = report.get("command", "")
    values = report.get("values", {})
    if command == "spectrum":
        eig = [values[k] for k in sorted(values) if k.startswith("eigenvalue_")]
        fig = plot_spectrum(eig)
    elif command == "eval-pose" and "auc_at_30" in values:
        taus = sorted(
            int(k.rsplit("_", 1)[1]) for k in values if k.startswith("acc_at_")
        )
        curve = [values[f"acc_at_{t}"] for t in taus]
        fig = plot_accuracy_curve(taus, curve, values["auc_at_30"])
    elif command == "robustness":
        stds = {k: max(v, 1e-18) for k, v in values.items() if k.endswith("_std")}
        fig = plot_value_bars(stds, "reference-swap metric std", log=True)
    else:
        fig = plot_value_bars(values, command or "report")
    save_figure(fig, path)
