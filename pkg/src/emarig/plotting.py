"""Trajectory comparison figures (coil vs. tracked vertex), rendered off-screen."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import AXES, align_frames  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.titlesize": 8,
    "axes.labelsize": 8,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.0,
}


def trajectory_figure(seq, trajectories, pairs, report=None):
    """Grid of coils (rows) by axes (columns), coil and vertex overlaid.

    Each vertex series is shifted by its mean offset from the coil so the
    shapes can be compared; Pearson r is shape-only anyway.
    """
    idx = align_frames(seq, trajectories)
    t = seq.timestamps
    coils = list(pairs)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(coils), 3, figsize=(9, 1.8 * len(coils) + 0.4),
                                 sharex=True, squeeze=False)
        for row, coil in enumerate(coils):
            c = trajectories.position(coil)[idx]
            v = seq.vertex_track(int(pairs[coil]))
            for k, axis in enumerate(AXES):
                ax = axes[row, k]
                ax.plot(t, c[:, k], color="0.2", label="coil %s" % coil)
                ax.plot(t, v[:, k] - (v[:, k].mean() - c[:, k].mean()), color="C3",
                        linestyle="--", label="vertex %d" % pairs[coil])
                title = "%s %s" % (coil, axis)
                if report is not None:
                    r = report.r(coil, axis)
                    title += "  r=%s" % ("n/a" if np.isnan(r) else "%.3f" % r)
                ax.set_title(title, loc="left")
                if k == 0:
                    ax.set_ylabel("mm")
                    ax.legend(loc="upper right", frameon=False)
        for ax in axes[-1]:
            ax.set_xlabel("time (s)")
        fig.tight_layout()
    return fig


def save_figure(fig, path, dpi=110):
    """PNG without timestamp metadata so repeated runs give identical bytes."""
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
    return path
