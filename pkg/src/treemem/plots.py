"""Figure rendering: every report-path picture goes through here.

All figures are SVG files produced on the Agg-free vector backend with a
fixed hash salt and no embedded timestamps, so repeated runs write
byte-identical files.  The numbers behind each figure always live in a
sibling CSV written by the caller; the SVG is a view, never the source
of truth.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "treemem"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def _finish(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def activation_panel(matrix, path, highlight=3, title=""):
    """All units as grey lines over time, with the few highest-variance
    units drawn in color on top."""
    matrix = np.asarray(matrix, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    steps = np.arange(matrix.shape[0])
    for u in range(matrix.shape[1]):
        ax.plot(steps, matrix[:, u], color="0.8", linewidth=0.6, zorder=1)
    order = np.argsort(-matrix.std(axis=0), kind="stable")[: max(0, highlight)]
    for rank, u in enumerate(order):
        ax.plot(steps, matrix[:, u], linewidth=1.6, zorder=2, label=f"unit {u}",
                color=f"C{rank}")
    if len(order):
        ax.legend(loc="best", fontsize=7)
    ax.set_xlabel("observed step")
    ax.set_ylabel("activation")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _finish(fig, path)


def trajectory_panel(observed, predicted, truth, path, title=""):
    """Observed prefix, predicted suffix, and the true suffix in the
    plane (the first two coordinates of 3-D data)."""
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    observed = np.asarray(observed)
    predicted = np.asarray(predicted)
    ax.plot(observed[:, 0], observed[:, 1], "o-", color="C2", markersize=3,
            label="observed")
    if truth is not None:
        truth = np.asarray(truth)
        ax.plot(truth[:, 0], truth[:, 1], "s--", color="0.4", markersize=3,
                label="truth")
    ax.plot(predicted[:, 0], predicted[:, 1], "^-", color="C0", markersize=3,
            label="predicted")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title, fontsize=9)
    ax.legend(loc="best", fontsize=7)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _finish(fig, path)


def history_panel(history, path, title=""):
    """Recent stream trajectories shaded by age: newest black, oldest
    nearly white.  ``history`` is [(id, age, points)] with age 0 newest."""
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ages = [age for _, age, _ in history] or [0]
    span = max(max(ages), 1)
    for _, age, pts in history:
        pts = np.asarray(pts)
        shade = 0.85 * age / span
        ax.plot(pts[:, 0], pts[:, 1], color=str(shade), linewidth=1.0)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title, fontsize=9)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _finish(fig, path)


def series_panel(xs, ys, path, xlabel="", ylabel="", title="", logy=False):
    """One line with markers — loss curves and sweep summaries."""
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64),
            "o-", color="C0", markersize=4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _finish(fig, path)
