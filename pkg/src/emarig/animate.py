"""Drive a rig with coil trajectories and export the deformed meshes."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh, load_obj, save_obj
from .register import RigidTransform
from .rig import jaw_transform, skin, solve_spline_ik
from .util import atomic_write

SIDECAR = "sequence.json"
VERTEX_CSV = "vertices.csv"
FORMATS = ("obj-sequence", "vertex-csv")


@dataclass(frozen=True, eq=False)
class MeshSequence:
    """Per-frame tongue vertex buffers and mandible transforms.

    ``tongue`` is ``(frames, n, 3)``; column ``k`` holds mesh vertex
    ``vertex_ids[k]`` (all vertices in order when ``vertex_ids`` is None).
    """

    timestamps: np.ndarray
    frame_indices: np.ndarray
    tongue: np.ndarray
    tongue_faces: np.ndarray | None
    mandible_transforms: tuple
    mandible: TriMesh | None = None
    maxilla: TriMesh | None = None
    vertex_ids: np.ndarray | None = None
    gaps: tuple = field(default=())

    @property
    def frame_count(self):
        return len(self.timestamps)

    def vertex_track(self, vertex):
        """``(frames, 3)`` positions of one mesh vertex."""
        if self.vertex_ids is None:
            return self.tongue[:, vertex]
        hits = np.flatnonzero(self.vertex_ids == vertex)
        if not len(hits):
            raise KeyError("vertex %d was not exported with this sequence" % vertex)
        return self.tongue[:, hits[0]]

    def tongue_mesh(self, frame):
        return TriMesh(self.tongue[frame], self.tongue_faces)

    def mandible_mesh(self, frame):
        t = self.mandible_transforms[frame]
        return self.mandible.with_vertices(t.apply(self.mandible.vertices))


def find_gaps(timestamps, factor=1.5):
    """Pairs of consecutive timestamps whose spacing exceeds ``factor`` x median."""
    if len(timestamps) < 3:
        return ()
    dt = np.diff(timestamps)
    big = np.flatnonzero(dt > factor * np.median(dt))
    return tuple((float(timestamps[i]), float(timestamps[i + 1])) for i in big)


def _pose_frame(rig, frame, with_jaw):
    verts = skin(rig, solve_spline_ik(rig, frame))
    jaw = jaw_transform(rig, frame[rig.config.hinge.coil]) if with_jaw else RigidTransform.identity()
    return verts, jaw


def animate_utterance(rig, trajectories, window=None, workers=1):
    """Pose every frame (optionally a ``(start, stop)`` window) of a recording.

    Frames are independent; ``workers > 1`` evaluates them on a thread pool
    with identical results.
    """
    missing = [c for c in rig.coils if c not in trajectories.coils]
    if missing:
        raise KeyError("recording lacks rig coil(s): %s" % ", ".join(missing))
    start, stop = (0, trajectories.frame_count) if window is None else window
    frames = np.arange(trajectories.frame_count)[start:stop]
    if not len(frames):
        raise ValueError("empty frame window %r" % (window,))
    with_jaw = rig.config.hinge is not None
    jobs = [trajectories.frame(i) for i in frames]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda fr: _pose_frame(rig, fr, with_jaw), jobs))
    else:
        results = [_pose_frame(rig, fr, with_jaw) for fr in jobs]
    ts = trajectories.timestamps[frames]
    return MeshSequence(
        timestamps=ts,
        frame_indices=frames,
        tongue=np.stack([r[0] for r in results]),
        tongue_faces=rig.tongue.faces,
        mandible_transforms=tuple(r[1] for r in results),
        mandible=rig.mandible,
        maxilla=rig.maxilla,
        gaps=find_gaps(ts),
    )


def _sidecar(seq, fmt, dropped, tracked):
    return {
        "format": fmt,
        "frames": int(seq.frame_count),
        "frame_indices": [int(i) for i in seq.frame_indices],
        "timestamps": [round(float(t), 9) for t in seq.timestamps],
        "tracked_vertices": None if tracked is None else [int(v) for v in tracked],
        "mandible_transforms": [[round(float(x), 12) for x in t.matrix()[:3].reshape(-1)]
                                for t in seq.mandible_transforms],
        "gaps": [list(g) for g in seq.gaps],
        "dropped_rows": [{"line": d.line, "reason": d.reason} for d in dropped],
    }


def export_sequence(seq, fmt, directory, tracked=None, dropped=()):
    """Write a sequence to ``directory``; returns the written paths.

    ``obj-sequence``: ``frame_NNNNNN.obj`` tongue meshes, ``mandible_NNNNNN.obj``
    per frame and a static ``maxilla.obj`` (jaw files only when the rig has
    the meshes). ``vertex-csv``: ``vertices.csv`` with one row per frame per
    tracked vertex. A ``sequence.json`` sidecar records timing and gaps.
    """
    if fmt not in FORMATS:
        raise ValueError("unknown export format %r (choose %s)" % (fmt, ", ".join(FORMATS)))
    os.makedirs(directory, exist_ok=True)
    written = []

    def put(name, text):
        path = os.path.join(directory, name)
        atomic_write(path, text)
        written.append(path)

    if fmt == "obj-sequence":
        for k in range(seq.frame_count):
            put("frame_%06d.obj" % k, save_obj(seq.tongue_mesh(k)))
            if seq.mandible is not None:
                put("mandible_%06d.obj" % k, save_obj(seq.mandible_mesh(k)))
        if seq.maxilla is not None:
            put("maxilla.obj", save_obj(seq.maxilla))
    else:
        ids = np.arange(seq.tongue.shape[1]) if tracked is None else np.asarray(tracked, dtype=int)
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["frame", "time", "vertex", "x", "y", "z"])
        for k in range(seq.frame_count):
            for vid in ids:
                x, y, z = seq.vertex_track(int(vid))[k]
                writer.writerow([k, "%.6f" % seq.timestamps[k], int(vid),
                                 "%.6f" % (x + 0.0), "%.6f" % (y + 0.0), "%.6f" % (z + 0.0)])
        put(VERTEX_CSV, out.getvalue())
    meta = _sidecar(seq, fmt, dropped, None if fmt == "obj-sequence" else
                    (list(range(seq.tongue.shape[1])) if tracked is None else tracked))
    put(SIDECAR, json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return written


def load_sequence(directory):
    """Read back an exported sequence (tongue vertices and mandible transforms)."""
    with open(os.path.join(directory, SIDECAR), encoding="utf-8") as fh:
        meta = json.load(fh)
    n = meta["frames"]
    transforms = tuple(
        RigidTransform(np.array(m).reshape(3, 4)[:, :3], np.array(m).reshape(3, 4)[:, 3])
        for m in meta["mandible_transforms"]
    )
    ts = np.array(meta["timestamps"], float)
    common = dict(timestamps=ts, frame_indices=np.array(meta["frame_indices"], int),
                  mandible_transforms=transforms, gaps=tuple(tuple(g) for g in meta["gaps"]))
    if meta["format"] == "obj-sequence":
        frames, faces = [], None
        for k in range(n):
            with open(os.path.join(directory, "frame_%06d.obj" % k), encoding="ascii") as fh:
                mesh = load_obj(fh.read(), triangulate=True)
            frames.append(mesh.vertices)
            faces = mesh.faces
        return MeshSequence(tongue=np.stack(frames), tongue_faces=faces, **common)
    tracked = np.array(meta["tracked_vertices"], int)
    data = np.zeros((n, len(tracked), 3))
    column = {int(v): k for k, v in enumerate(tracked)}
    with open(os.path.join(directory, VERTEX_CSV), encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            data[int(row[0]), column[int(row[2])]] = [float(row[3]), float(row[4]), float(row[5])]
    return MeshSequence(tongue=data, tongue_faces=None, vertex_ids=tracked, **common)
