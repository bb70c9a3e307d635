"""Fidelity metrics: per-axis Pearson correlation between coil trajectories
and the trajectories of the mesh vertices that stand in for them."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .rig import tracking_vertices

AXES = ("x", "y", "z")
ALIGN_TOL = 1e-6


def pearson(x, y):
    """Sample Pearson correlation; NaN when either series is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1-D and of equal length (%s vs %s)" % (x.shape, y.shape))
    if len(x) < 2:
        raise ValueError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    # relative guard so a series that is constant up to rounding counts as constant
    scale = max(np.abs(x).max(), np.abs(y).max(), 1.0)
    floor = (len(x) * 1e-13 * scale) ** 2
    if sxx <= floor or syy <= floor:
        return math.nan
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def select_tracking_vertices(rig, coils):
    """Nearest bind-mesh vertex per coil; ties go to the lowest index."""
    missing = [c for c in coils if c not in rig.bind_frame]
    if missing:
        raise KeyError("coil(s) not in the bind frame: %s" % ", ".join(missing))
    return tracking_vertices(rig, coils)


@dataclass(frozen=True)
class CorrelationEntry:
    coil: str
    axis: str
    vertex: int
    r: float

    @property
    def defined(self):
        return not math.isnan(self.r)


@dataclass(frozen=True)
class CorrelationReport:
    entries: tuple
    frames: int

    @property
    def vertices(self):
        return {e.coil: e.vertex for e in self.entries}

    @property
    def undefined(self):
        return [(e.coil, e.axis) for e in self.entries if not e.defined]

    @property
    def mean(self):
        rs = [e.r for e in self.entries if e.defined]
        return float(np.mean(rs)) if rs else math.nan

    def r(self, coil, axis):
        for e in self.entries:
            if e.coil == coil and e.axis == axis:
                return e.r
        raise KeyError((coil, axis))

    def to_dict(self):
        mean = self.mean
        return {
            "frames": self.frames,
            "mean_r": None if math.isnan(mean) else round(mean, 12),
            "vertices": self.vertices,
            "entries": [
                {"coil": e.coil, "axis": e.axis, "vertex": e.vertex,
                 "r": None if not e.defined else round(e.r, 12)}
                for e in self.entries
            ],
            "undefined": [list(u) for u in self.undefined],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        entries = tuple(
            CorrelationEntry(e["coil"], e["axis"], int(e["vertex"]), math.nan if e["r"] is None else float(e["r"]))
            for e in d["entries"]
        )
        return cls(entries, int(d["frames"]))

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["coil", "axis", "vertex", "r"])
        for e in self.entries:
            w.writerow([e.coil, e.axis, e.vertex, "" if not e.defined else "%.9f" % e.r])
        return out.getvalue()


def align_frames(seq, trajectories, tol=ALIGN_TOL):
    """Indices into ``trajectories`` matching each sequence timestamp."""
    idx = np.searchsorted(trajectories.timestamps, seq.timestamps - tol)
    idx = np.minimum(idx, trajectories.frame_count - 1)
    bad = np.abs(trajectories.timestamps[idx] - seq.timestamps) > tol
    if bad.any():
        k = int(np.argmax(bad))
        raise ValueError("sequence frame %d (t=%.6f) has no matching recording frame" % (k, seq.timestamps[k]))
    return idx


def trajectory_correlation(seq, trajectories, pairs):
    """Correlate each coil with its paired vertex, axis by axis.

    ``pairs`` maps coil name to mesh vertex id.
    """
    idx = align_frames(seq, trajectories)
    entries = []
    for coil, vertex in pairs.items():
        coil_track = trajectories.position(coil)[idx]
        vert_track = seq.vertex_track(int(vertex))
        for k, axis in enumerate(AXES):
            entries.append(CorrelationEntry(coil, axis, int(vertex), pearson(coil_track[:, k], vert_track[:, k])))
    return CorrelationReport(tuple(entries), int(seq.frame_count))
