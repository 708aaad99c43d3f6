"""Report figures: estimate-vs-truth traces of a single run and Monte-Carlo
error histograms. Uses the Agg canvas directly, so no display is needed and
pyplot's global state is never touched."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .geometry import euler_zyx
from .io import EstimateRecord, TruthRecord

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
}
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
OFFBOARD_SHADE = "#d9f2d9"


def _new_figure(width: float, height: float | None = None) -> Figure:
    fig = Figure(figsize=(width, height or width * GOLDEN))
    FigureCanvasAgg(fig)
    return fig


def _tidy(ax):
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.grid(True, linewidth=0.3, alpha=0.5)


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    return path


def _onboard_spans(times: np.ndarray, onboard: np.ndarray) -> list[tuple[float, float]]:
    spans, start = [], None
    for t, on in zip(times, onboard):
        if on and start is None:
            start = t
        elif not on and start is not None:
            spans.append((start, t))
            start = None
    if start is not None:
        spans.append((start, times[-1]))
    return spans


@matplotlib.rc_context(STYLE)
def plot_trace(records: list, path, title: str = "") -> Path:
    """Relative position and attitude, estimate against truth. Time under
    offboard control is shaded."""
    truth = [r for r in records if isinstance(r, TruthRecord)]
    est = {r.t: r for r in records if isinstance(r, EstimateRecord)}
    if not truth:
        raise ValueError("no truth records to plot")
    t = np.array([r.t for r in truth])
    p = np.array([r.p for r in truth])
    eul = np.degrees(np.array([euler_zyx(r.array("R")) for r in truth]))
    has_est = np.array([r.t in est for r in truth])
    p_hat = np.full_like(p, np.nan)
    eul_hat = np.full_like(eul, np.nan)
    for i, r in enumerate(truth):
        e = est.get(r.t)
        if e is not None:
            p_hat[i] = e.p
            eul_hat[i] = np.degrees(euler_zyx(e.array("R")))

    fig = _new_figure(6.5, 7.0)
    axes = fig.subplots(6, 1, sharex=True)
    labels = ["x [m]", "y [m]", "z [m]", "roll [deg]", "pitch [deg]", "yaw [deg]"]
    truth_cols = [p[:, 0], p[:, 1], p[:, 2], eul[:, 0], eul[:, 1], eul[:, 2]]
    est_cols = [p_hat[:, 0], p_hat[:, 1], p_hat[:, 2], eul_hat[:, 0], eul_hat[:, 1], eul_hat[:, 2]]
    spans = _onboard_spans(t, has_est)
    for ax, label, tr, es in zip(axes, labels, truth_cols, est_cols):
        ax.axvspan(t[0], t[-1], color=OFFBOARD_SHADE, zorder=0)
        for a, b in spans:
            ax.axvspan(a, b, color="white", zorder=0)
        ax.plot(t, tr, color="k", label="truth")
        ax.plot(t, es, color="tab:red", linestyle="--", label="estimate")
        ax.set_ylabel(label)
        _tidy(ax)
    axes[0].legend(loc="upper right", ncols=2, frameon=False)
    axes[-1].set_xlabel("time [s]")
    if title:
        axes[0].set_title(title)
    fig.align_ylabels(axes)
    return _save(fig, path)


@matplotlib.rc_context(STYLE)
def plot_error_histograms(position_errors: np.ndarray, in_range_errors: np.ndarray, yaw_errors_deg: np.ndarray, path) -> Path:
    """Histograms of onboard position error, in-range position error and
    absolute yaw error, pooled over a batch."""
    fig = _new_figure(8.0, 2.6)
    axes = fig.subplots(1, 3)
    panels = [
        (np.asarray(position_errors) * 100.0, "position error [cm]", 10.0),
        (np.asarray(in_range_errors) * 100.0, "in-range position error [cm]", 2.0),
        (np.abs(np.asarray(yaw_errors_deg)), "|yaw error| [deg]", 5.0),
    ]
    for ax, (data, label, mark) in zip(axes, panels):
        data = data[np.isfinite(data)]
        if data.size:
            ax.hist(data, bins=50, color="tab:blue", alpha=0.75)
            ax.axvline(np.median(data), color="k", linewidth=0.8, label="median")
        ax.axvline(mark, color="tab:red", linestyle="--", linewidth=0.8, label="target")
        ax.set_xlabel(label)
        _tidy(ax)
    axes[0].set_ylabel("steps")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
