"""Figure rendering for the batch reports.

Every report command writes delimited data plus a PNG rendering of the same
quantities. Figures are for human review; the delimited files are the
stable machine-readable interface.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVEFIG_KW = {"dpi": 120, "metadata": {"Date": None}, "bbox_inches": "tight"}


def boundary_figure(path: Path, per_mode: dict[str, list[float]]):
    """Chunk-boundary position jumps per anchoring mode."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for mode, jumps in sorted(per_mode.items()):
        ax.plot(range(1, len(jumps) + 1), [j * 100 for j in jumps], marker="o", label=mode)
    ax.set_xlabel("chunk boundary")
    ax.set_ylabel("position jump [cm]")
    ax.set_title("Action-chunk boundary discontinuity")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def drift_figure(path: Path, curves: dict[str, tuple[np.ndarray, np.ndarray]]):
    """Blind-keypoint commanded-target error over time per command style."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for style, (times, errors) in sorted(curves.items()):
        ax.plot(times, np.asarray(errors) * 100, label=style)
    ax.axhline(5.0, color="red", linestyle="--", alpha=0.6, label="5 cm")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("target error [cm]")
    ax.set_title("Blind-keypoint command drift")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def tracking_error_figure(path: Path, metrics_by_keypoint: dict[str, dict[str, float]]):
    """Mean/max tracking error bars per keypoint."""
    names = sorted(metrics_by_keypoint)
    means = [metrics_by_keypoint[n]["mean"] * 100 for n in names]
    maxs = [metrics_by_keypoint[n]["max"] * 100 for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(x - 0.2, means, width=0.4, label="mean")
    ax.bar(x + 0.2, maxs, width=0.4, label="max")
    ax.set_xticks(x, names, rotation=20)
    ax.set_ylabel("position error [cm]")
    ax.set_title("Tracking error per keypoint")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def reward_trace_figure(path: Path, times, r_body, r_ee, r_total):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(times, r_body, label="whole-body")
    ax.plot(times, r_ee, label="end-effector")
    ax.plot(times, r_total, label="total", linewidth=2)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("reward")
    ax.set_title("Tracking reward trace")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
