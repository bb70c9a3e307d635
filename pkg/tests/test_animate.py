import hashlib
import json
import os

import numpy as np
import pytest

from emarig.animate import animate_utterance, export_sequence, find_gaps, load_sequence
from emarig.trackio import CoilTrajectorySet


def constant_set(rig, frames=5):
    coils = tuple(rig.bind_frame)
    pos = np.stack([np.stack([rig.bind_frame[c] for c in coils])] * frames)
    normals = np.tile([0, 0, 1.0], (frames, len(coils), 1))
    return CoilTrajectorySet(coils, np.arange(frames) * 0.005, pos, normals)


def digests(directory):
    return {name: hashlib.sha256(open(os.path.join(directory, name), "rb").read()).hexdigest()
            for name in sorted(os.listdir(directory))}


def test_bind_frames_reproduce_bind_mesh(phantom_rig):
    seq = animate_utterance(phantom_rig, constant_set(phantom_rig))
    assert seq.frame_count == 5
    np.testing.assert_allclose(seq.tongue, np.broadcast_to(phantom_rig.tongue.vertices, seq.tongue.shape), atol=1e-9)
    for t in seq.mandible_transforms:
        np.testing.assert_array_equal(t.matrix(), np.eye(4))


def test_window_and_errors(phantom_rig, synth_traj):
    seq = animate_utterance(phantom_rig, synth_traj, (0, 10))
    assert seq.frame_count == 10
    assert seq.tongue.shape == (10, phantom_rig.tongue.vertex_count, 3)
    np.testing.assert_array_equal(seq.frame_indices, np.arange(10))
    with pytest.raises(ValueError):
        animate_utterance(phantom_rig, synth_traj, (10, 10))
    partial = CoilTrajectorySet(("T1", "T2"), synth_traj.timestamps, synth_traj.positions[:, :2], synth_traj.normals[:, :2])
    with pytest.raises(KeyError, match="T3"):
        animate_utterance(phantom_rig, partial)


def test_parallel_and_split_runs_identical(phantom_rig, synth_traj):
    serial = animate_utterance(phantom_rig, synth_traj, (0, 40))
    pooled = animate_utterance(phantom_rig, synth_traj, (0, 40), workers=4)
    assert np.array_equal(serial.tongue, pooled.tongue)
    back = animate_utterance(phantom_rig, synth_traj, (20, 40))
    front = animate_utterance(phantom_rig, synth_traj, (0, 20))
    assert np.array_equal(np.concatenate([front.tongue, back.tongue]), serial.tongue)


def test_tip_vertex_is_periodic(phantom_rig, synth_traj):
    # axis frequencies 1, 3, 2 Hz: common period 1 s = 200 frames at 200 Hz
    seq = animate_utterance(phantom_rig, synth_traj, (0, 400))
    tip = np.argmin(np.linalg.norm(phantom_rig.tongue.vertices - phantom_rig.bind_frame["T1"], axis=1))
    track = seq.vertex_track(int(tip))
    np.testing.assert_allclose(track[200:400], track[0:200], atol=1e-9)
    spectrum = np.abs(np.fft.rfft(track - track.mean(axis=0), axis=0))
    freqs = np.fft.rfftfreq(400, d=1 / 200.0)
    assert freqs[np.argmax(spectrum[:, 0])] == pytest.approx(1.0)
    assert freqs[np.argmax(spectrum[:, 1])] == pytest.approx(3.0)


def test_gaps_recorded(phantom_rig, synth_traj):
    keep = np.r_[0:5, 9:14]
    sub = synth_traj.select(keep)
    seq = animate_utterance(phantom_rig, sub)
    assert seq.gaps == ((pytest.approx(0.02), pytest.approx(0.045)),)
    assert find_gaps(np.arange(5) * 0.01) == ()


def test_obj_sequence_export(phantom_rig, synth_traj, tmp_path):
    seq = animate_utterance(phantom_rig, synth_traj, (0, 3))
    export_sequence(seq, "obj-sequence", tmp_path / "a")
    names = sorted(os.listdir(tmp_path / "a"))
    assert [n for n in names if n.startswith("frame_")] == ["frame_000000.obj", "frame_000001.obj", "frame_000002.obj"]
    assert len([n for n in names if n.startswith("mandible_")]) == 3
    assert "maxilla.obj" in names and "sequence.json" in names
    assert len([n for n in names if n.endswith(".obj")]) == 7
    export_sequence(seq, "obj-sequence", tmp_path / "b")
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    back = load_sequence(tmp_path / "a")
    np.testing.assert_allclose(back.tongue, seq.tongue, atol=5e-7)
    for x, y in zip(back.mandible_transforms, seq.mandible_transforms):
        np.testing.assert_allclose(x.matrix(), y.matrix(), atol=1e-11)
    assert not [n for n in names if n.startswith(".tmp")]


def test_vertex_csv_export(phantom_rig, synth_traj, tmp_path):
    seq = animate_utterance(phantom_rig, synth_traj, (0, 4))
    export_sequence(seq, "vertex-csv", tmp_path, tracked=[7, 42], dropped=synth_traj.dropped)
    lines = (tmp_path / "vertices.csv").read_text().splitlines()
    assert lines[0] == "frame,time,vertex,x,y,z"
    assert len(lines) - 1 == 8
    assert lines[1].startswith("0,0.000000,7,")
    meta = json.loads((tmp_path / "sequence.json").read_text())
    assert meta["tracked_vertices"] == [7, 42] and meta["frames"] == 4
    back = load_sequence(tmp_path)
    np.testing.assert_allclose(back.vertex_track(42), seq.vertex_track(42), atol=5e-7)
    with pytest.raises(KeyError):
        back.vertex_track(3)
    with pytest.raises(ValueError):
        export_sequence(seq, "fbx", tmp_path)
