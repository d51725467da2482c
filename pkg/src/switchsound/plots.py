"""Static SVG figures with their data tables written alongside as CSV.

Figures carry no timestamps and use a fixed hash salt, so identical data gives
byte-identical files.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "switchsound"
matplotlib.rcParams["svg.fonttype"] = "none"


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows))
    return path


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def ladder_plot(
    path: str | Path,
    steps: Sequence[int],
    medians: Sequence[float],
    scores: Mapping[int, Sequence[float]],
    threshold: float,
    xlabel: str,
    title: str,
) -> Path:
    """Score-versus-step curve with the anomaly threshold as a dashed line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in steps:
        pts = scores.get(s, [])
        ax.scatter([s] * len(pts), pts, s=8, color="0.6", zorder=1)
    ax.plot(steps, medians, marker="o", color="C0", label="median score", zorder=2)
    ax.axhline(threshold, color="C3", linestyle="--", label="threshold")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("anomaly score")
    if min(m for m in medians) > 0:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))


def traces_plot(path: str | Path, times: np.ndarray, traces: Mapping[str, np.ndarray],
                boundaries_s: Sequence[float], title: str) -> Path:
    """Per-source activation traces with decoded phase boundaries."""
    names = list(traces)
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 1.4 * len(names)), sharex=True)
    axes = np.atleast_1d(axes)
    for ax, name in zip(axes, names):
        ax.plot(times, traces[name], color="C0", linewidth=0.8)
        for b in boundaries_s:
            ax.axvline(b, color="0.5", linewidth=0.5, linestyle=":")
        ax.set_ylabel(name, rotation=0, ha="right", fontsize=8)
        ax.set_yticks([])
    axes[-1].set_xlabel("time [s]")
    axes[0].set_title(title)
    fig.tight_layout()
    return _save(fig, Path(path))


def trend_plot(path: str | Path, series: Mapping[str, Sequence[float]],
               thresholds: Mapping[str, float], ylabel: str, title: str) -> Path:
    """One line per series against event sequence number."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (name, values) in enumerate(series.items()):
        ax.plot(range(len(values)), values, marker=".", color=f"C{i}", label=name)
        if name in thresholds:
            ax.axhline(thresholds[name], color=f"C{i}", linestyle="--", linewidth=0.8)
    ax.set_xlabel("event")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))
