"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import filecmp
import math
import os
import time

import numpy as np
import pytest
from conftest import random_rotation
from oracles import closest_on_mesh_bruteforce, hull_facets_bruteforce, kabsch_check_angle
from test_mesh import exploded_cube
from test_register import bumpy_patch
from test_rig import straight_rig, transform_config

from emarig import phantom
from emarig.animate import animate_utterance
from emarig.bvh import BvhDocument, BvhRoot, RotationMode, parse_bvh, write_bvh
from emarig.cli import main
from emarig.evaluate import select_tracking_vertices, trajectory_correlation
from emarig.mesh import (MeshQuery, TriMesh, box, catmull_clark, decimate_cluster, deduplicate_vertices,
                         icosphere)
from emarig.register import (RigidTransform, axis_angle_matrix, convex_hull_indices, icp_point_to_mesh,
                             rms_error, umeyama_rigid)
from emarig.rig import build_rig, jaw_transform, skin, solve_spline_ik
from emarig.trackio import synth_trajectories


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print("\nACCEPTANCE %d: %s  %s" % (number, "PASS" if ok else "FAIL", detail))
        assert ok, detail
    return report


def test_criterion_1_synthetic_fidelity(verdict):
    start = time.perf_counter()
    assets = phantom.assets()
    traj = synth_trajectories(phantom.synth_spec(amplitude=8.0, rate=200.0, frames=500))
    rig = build_rig(assets["tongue"], traj.frame(0), phantom.rig_config(), assets["mandible"], assets["maxilla"])
    seq = animate_utterance(rig, traj)
    report = trajectory_correlation(seq, traj, select_tracking_vertices(rig, ("T1", "T2", "T3")))
    elapsed = time.perf_counter() - start
    ok = (traj.frame_count == 500 and 500 <= assets["tongue"].vertex_count <= 700
          and report.mean >= 0.95 and elapsed < 10.0)
    verdict(1, ok, "mean r = %.4f over %d pairs, %.2f s" % (report.mean, len(report.entries), elapsed))


def random_document(rng):
    nroots = int(rng.integers(1, 13))
    frames = int(rng.integers(1, 201))
    roots = []
    for k in range(nroots):
        e = rng.normal(size=3)
        roots.append(BvhRoot("coil%d" % k, rng.uniform(-100, 100, 3), end_site=e / np.linalg.norm(e)))
    mode = list(RotationMode)[int(rng.integers(0, 2))]
    return BvhDocument(tuple(roots), rng.uniform(-200, 200, (frames, 6 * nroots)), float(rng.uniform(0.001, 0.1)), mode)


def test_criterion_2_bvh_round_trip(verdict):
    rng = np.random.default_rng(2)
    worst, bad = 0.0, []
    for trial in range(100):
        doc = random_document(rng)
        text = write_bvh(doc)
        back = parse_bvh(text)
        lines = [ln.strip() for ln in text.splitlines()]
        roots = [ln for ln in lines if ln.startswith("ROOT ")]
        channels = [ln for ln in lines if ln.startswith("CHANNELS")]
        shape_ok = (len(roots) == len(doc.roots) and len(channels) == len(doc.roots)
                    and all(c.split()[1] == "6" for c in channels)
                    and lines.count("End Site") == len(doc.roots)
                    and all(abs(np.linalg.norm(r.end_site) - 1) <= 1e-9 for r in back.roots))
        err = max(np.abs(back.motion - doc.motion).max(),
                  max(np.abs(np.asarray(a.offset) - b.offset).max() for a, b in zip(back.roots, doc.roots)),
                  abs(back.frame_time - doc.frame_time))
        worst = max(worst, err)
        if not (shape_ok and err <= 1e-4 and back.rotation_mode == doc.rotation_mode):
            bad.append(trial)
    verdict(2, not bad, "100 documents, worst value error %.2e, failures %s" % (worst, bad))


def test_criterion_3_registration(verdict):
    rng = np.random.default_rng(3)
    worst_exact = worst_noisy = 0.0
    for _ in range(100):
        src = rng.uniform(-50, 50, (200, 3))
        t = RigidTransform(random_rotation(rng), rng.uniform(-100, 100, 3))
        dst = t.apply(src)
        est = umeyama_rigid(src, dst)
        worst_exact = max(worst_exact, kabsch_check_angle(est.rotation, t.rotation),
                          np.abs(est.translation - t.translation).max())
        est = umeyama_rigid(src, dst + rng.normal(0, 0.1, dst.shape))
        worst_noisy = max(worst_noisy, math.degrees(kabsch_check_angle(est.rotation, t.rotation)))

    target = bumpy_patch()
    inner = target.vertices[(np.abs(target.vertices[:, 0]) < 6) & (np.abs(target.vertices[:, 1]) < 6)]
    query = MeshQuery(target)
    icp_mm = icp_deg = 0.0
    for _ in range(10):
        axis = rng.normal(size=3)
        direction = rng.normal(size=3)
        pert = RigidTransform(axis_angle_matrix(axis, math.radians(3.0)), 2.0 * direction / np.linalg.norm(direction))
        res = icp_point_to_mesh(pert.apply(inner), target, query=query)
        recovered = res.transform.compose(pert)
        icp_mm = max(icp_mm, rms_error(recovered, inner, inner))
        icp_deg = max(icp_deg, math.degrees(kabsch_check_angle(recovered.rotation, np.eye(3))))
    ok = worst_exact <= 1e-6 and worst_noisy < 0.5 and icp_mm <= 0.1 and icp_deg <= 0.1
    verdict(3, ok, "noiseless %.1e, noisy %.3f deg, ICP %.2e mm / %.2e deg" %
            (worst_exact, worst_noisy, icp_mm, icp_deg))


def test_criterion_4_hull_oracle(verdict):
    rng = np.random.default_rng(4)
    bad = []
    for trial in range(200):
        pts = rng.normal(size=(int(rng.integers(4, 51)), 3))
        if {tuple(sorted(f)) for f in convex_hull_indices(pts)} != hull_facets_bruteforce(pts):
            bad.append(trial)
    verdict(4, not bad, "200 clouds, mismatches %s" % bad)


def test_criterion_5_catmull_clark(verdict):
    m = box()
    v, e, f = 8, 12, 6
    counts, ok = [], True
    for _ in range(4):
        m = catmull_clark(m, 1)
        v, e, f = v + e + f, 2 * e + 4 * f, 4 * f
        got = (m.vertex_count, len(m.edges()), m.face_count)
        counts.append(got[::2])
        ok &= got == (v, e, f) and got[0] - got[1] + got[2] == 2 and m.faces.shape[1] == 4
    ok &= counts[0] == (26, 24) and counts[1] == (98, 96)
    verdict(5, ok, "(V, F) per level %s" % counts)


def built_rigs():
    assets = phantom.assets()
    traj = synth_trajectories(phantom.synth_spec())
    tongue = assets["tongue"]
    yield "phantom@frame0", build_rig(tongue, traj.frame(0), phantom.rig_config(), assets["mandible"], assets["maxilla"])
    yield "phantom@bind", build_rig(tongue, phantom.bind_positions(), phantom.rig_config())
    yield "no-anchors", build_rig(tongue, phantom.bind_positions(), phantom.rig_config(anchor_coils={}))
    yield "both-anchors", build_rig(tongue, phantom.bind_positions(),
                                    phantom.rig_config(anchor_coils={"root": "T3", "tip": "T1"}))
    yield "smoothstep", build_rig(tongue, traj.frame(0), phantom.rig_config(smoothstep=True, joint_count=12))
    for j in (2, 4, 6):
        yield "straight-%d" % j, straight_rig(j)


def test_criterion_6_skinning_soundness(verdict):
    problems = []
    for name, rig in built_rigs():
        sums = rig.weights.sum(axis=1)
        if not np.all((np.abs(sums - 1) <= 1e-9) | (sums == 0)):
            problems.append(name + ": weights")
        rest = skin(rig, solve_spline_ik(rig, rig.bind_frame))
        if np.abs(rest - rig.tongue.vertices).max() > 1e-9:
            problems.append(name + ": bind")

    assets = phantom.assets()
    traj = synth_trajectories(phantom.synth_spec())
    rng = np.random.default_rng(6)
    cfg = phantom.rig_config()
    rig = build_rig(assets["tongue"], traj.frame(0), cfg)
    worst = 0.0
    for _ in range(3):
        t = RigidTransform(random_rotation(rng), rng.normal(0, 30, 3))
        moved = build_rig(assets["tongue"].transformed(t.rotation, t.translation),
                          {c: t.apply(p) for c, p in traj.frame(0).items()}, transform_config(cfg, t))
        for f in (77, 250, 401):
            frame = traj.frame(f)
            a = skin(rig, solve_spline_ik(rig, frame))
            b = skin(moved, solve_spline_ik(moved, {c: t.apply(p) for c, p in frame.items()}))
            ja, jb = jaw_transform(rig, frame["jaw"]), jaw_transform(moved, t.apply(frame["jaw"]))
            worst = max(worst, np.abs(b - t.apply(a)).max(),
                        np.abs(jb.matrix() - t.compose(ja).compose(t.inverse()).matrix()).max())
    if worst > 1e-6:
        problems.append("equivariance %.2e" % worst)
    verdict(6, not problems, "rigs checked, equivariance error %.1e %s" % (worst, problems or ""))


def test_criterion_7_mesh_reduction(verdict):
    merged = deduplicate_vertices(exploded_cube())
    mesh = icosphere(20.0, 4)
    # cells double each step so every coarse cell is a union of finer ones
    cells = [0.25 * 2 ** k for k in range(10)]
    counts = [decimate_cluster(mesh, c).vertex_count for c in cells]
    monotone = all(b <= a for a, b in zip(counts, counts[1:]))
    ok = merged.vertex_count == 8 and merged.face_count == 12 and monotone and counts[0] <= mesh.vertex_count
    verdict(7, ok, "dedup 36 -> %d, sweep %s" % (merged.vertex_count, counts))


def test_criterion_8_closest_point(verdict):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(5):
        sphere = icosphere(2.0, 1)
        meshes = [TriMesh(sphere.vertices + rng.normal(0, 0.2, sphere.vertices.shape), sphere.faces),
                  TriMesh(rng.uniform(-3, 3, (600, 3)), np.arange(600).reshape(200, 3))]
        for mesh in meshes:
            assert mesh.face_count <= 200
            q = rng.uniform(-4, 4, (100, 3))
            pts, _, dists = MeshQuery(mesh).closest(q)
            for i, p in enumerate(q):
                ref_pt, _, ref_d = closest_on_mesh_bruteforce(mesh.vertices, mesh.faces, p)
                worst = max(worst, abs(dists[i] - ref_d), np.abs(pts[i] - ref_pt).max())
    verdict(8, worst <= 1e-9, "1000 queries, worst deviation %.1e" % worst)


def run_chain(out):
    os.makedirs(out)
    steps = [
        ("synth", "--noise", "0.05", "--out", out / "ema.csv", "--phantom-dir", out / "ph"),
        ("convert", "--in", out / "ema.csv", "--out", out / "motion.bvh"),
        ("build-rig", "--mesh", out / "ph" / "tongue.obj", "--ema", out / "ema.csv",
         "--config", out / "ph" / "rig-config.json", "--mandible", out / "ph" / "mandible.obj",
         "--maxilla", out / "ph" / "maxilla.obj", "--out", out / "rig.json"),
        ("animate", "--rig", out / "rig.json", "--ema", out / "ema.csv", "--out-dir", out / "seq"),
        ("evaluate", "--rig", out / "rig.json", "--ema", out / "ema.csv", "--seq", out / "seq",
         "--out", out / "report.json"),
    ]
    for argv in steps:
        assert main(["--seed", "9"] + [str(a) for a in argv]) == 0, argv[0]


def tree(root):
    found = []
    for base, _, names in os.walk(root):
        found += [os.path.relpath(os.path.join(base, n), root) for n in names]
    return sorted(found)


def test_criterion_9_determinism(tmp_path, verdict):
    run_chain(tmp_path / "a")
    run_chain(tmp_path / "b")
    files = tree(tmp_path / "a")
    same_tree = files == tree(tmp_path / "b")
    differ = [f for f in files if not filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)]
    objs = sum(f.endswith(".obj") for f in files)
    needed = {"motion.bvh", "report.json", "report.csv", "report.png", os.path.join("seq", "frame_000000.obj")}
    ok = same_tree and not differ and needed <= set(files)
    verdict(9, ok, "%d files compared (%d OBJ), differing %s" % (len(files), objs, differ))
