import hashlib

import numpy as np

from emarig.animate import animate_utterance
from emarig.evaluate import select_tracking_vertices, trajectory_correlation
from emarig.plotting import save_figure, trajectory_figure


def render(rig, traj, path):
    coils = ("T1", "T2", "T3")
    pairs = select_tracking_vertices(rig, coils)
    seq = animate_utterance(rig, traj, window=(0, 80))
    report = trajectory_correlation(seq, traj, pairs)
    fig = trajectory_figure(seq, traj, pairs, report)
    assert len(fig.axes) == 9
    save_figure(fig, path)
    return path.read_bytes()


def test_png_written_and_deterministic(phantom_rig, synth_traj, tmp_path):
    a = render(phantom_rig, synth_traj, tmp_path / "a.png")
    b = render(phantom_rig, synth_traj, tmp_path / "b.png")
    assert a[:8] == b"\x89PNG\r\n\x1a\n"
    assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()
    assert np.frombuffer(a, np.uint8).size > 10_000
