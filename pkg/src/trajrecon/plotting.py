"""Per-lane time-space diagrams as PNG images or CSV point dumps."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DEFAULT_DT, frame_index
from .evaluation import FrameMatch

LABEL_COLORS = {"tp": "tab:green", "fp": "tab:red", "fn": "tab:gray", "": "tab:blue"}


@dataclass
class PlotResult:
    path: Path
    n_polylines: int
    n_points: int


def _lane(y, lane_width):
    return int(np.floor(np.median(y) / lane_width))


def _labels(matches: Sequence[FrameMatch] | None, dt: float):
    """``(id, frame) -> 'tp' | 'fp' | 'fn'`` lookup built from frame matches."""
    if not matches:
        return {}
    lab = {}
    for fm in matches:
        k = int(round(fm.t / dt))
        for g, p, _ in fm.pairs:
            lab[(p, k)] = "tp"
            lab[(g, k)] = "tp"
        for g in fm.fn:
            lab[(g, k)] = "fn"
        for p in fm.fp:
            lab[(p, k)] = "fp"
    return lab


def emit_timespace_plot(dataset: Sequence, path, lane: int | None = None, matches: Sequence[FrameMatch] | None = None,
                        lane_width: float = 12.0, fmt: str | None = None, dt: float = DEFAULT_DT,
                        title: str | None = None) -> PlotResult:
    """Write a time-space diagram of ``dataset``.

    One polyline per object, optionally restricted to one lane (bucketed by
    median lateral position). With ``matches`` the points are coloured by
    true positive / false positive / false negative status. ``fmt`` is
    ``"png"`` or ``"csv"``; by default it follows the file suffix.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "png").lower()
    labels = _labels(matches, dt)
    rows = []
    n_lines = 0
    for o in dataset:
        y = np.asarray(o.y)
        if y.size == 0:
            continue
        ln = _lane(y, lane_width)
        if lane is not None and ln != lane:
            continue
        n_lines += 1
        k = frame_index(o.t, dt)
        lab = [labels.get((str(o.id), int(kk)), "") for kk in k] if labels else [""] * k.size
        rows.append((str(o.id), np.asarray(o.t), np.asarray(o.x), y, ln, lab))
    path.parent.mkdir(parents=True, exist_ok=True)
    n_pts = sum(r[1].size for r in rows)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t", "x", "y", "lane", "label"])
            for oid, t, x, y, ln, lab in rows:
                for i in range(t.size):
                    w.writerow([oid, f"{t[i]:.2f}", f"{x[i]:.3f}", f"{y[i]:.3f}", ln, lab[i]])
        return PlotResult(path, n_lines, n_pts)
    if fmt != "png":
        raise ValueError(f"unsupported plot format {fmt!r}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(10, 5))
    for oid, t, x, y, ln, lab in rows:
        if labels:
            lab = np.asarray(lab)
            for key in ("tp", "fp", "fn"):
                sel = lab == key
                if sel.any():
                    ax.scatter(t[sel], x[sel], s=0.5, c=LABEL_COLORS[key], linewidths=0)
        else:
            ax.plot(t, x, lw=0.6)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("position (ft)")
    if title:
        ax.set_title(title)
    elif lane is not None:
        ax.set_title(f"lane {lane}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return PlotResult(path, n_lines, n_pts)
