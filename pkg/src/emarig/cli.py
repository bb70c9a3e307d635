"""``emarig`` command-line entry point.

Exit status: 0 success, 2 parse or validation error, 3 numeric failure,
4 I/O failure. Outputs are written to a temp file and renamed, so a failed
command leaves nothing half-written.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .animate import FORMATS, animate_utterance, export_sequence, load_sequence
from .bvh import RotationMode, from_bvh, parse_bvh, to_bvh, write_bvh
from .config import (
    dump_json,
    load_json,
    load_landmarks,
    load_pipeline_config,
    load_rig_config,
    rig_config_to_dict,
    rig_from_text,
    rig_to_text,
    synth_spec_from_dict,
    synth_spec_to_dict,
)
from .errors import DegenerateError, ParseError
from .evaluate import select_tracking_vertices, trajectory_correlation
from .mesh import MeshQuery, mesh_text, read_mesh, save_obj
from .register import (
    Plane,
    RigidTransform,
    icp_point_to_mesh,
    midsagittal_plane,
    palate_contour,
    umeyama_rigid,
)
from .rig import build_rig
from .trackio import (
    DEFAULT_FRAME_PERIOD,
    CoilTrajectorySet,
    csv_header_layout,
    parse_coil_csv,
    parse_est_ascii,
    synth_trajectories,
    write_coil_csv,
)
from .util import atomic_write

log = logging.getLogger("emarig")

EXIT_PARSE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


def _read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _coil_list(text):
    return tuple(c.strip() for c in text.split(",") if c.strip()) if text else None


def read_trajectories(path, layout=None, frame_period=DEFAULT_FRAME_PERIOD):
    """EST ascii, BVH or CSV, sniffed from the content."""
    text = _read(path)
    head = text.lstrip()[:16]
    if head.startswith("EST_File"):
        return parse_est_ascii(text)
    if head.startswith("HIERARCHY"):
        return from_bvh(parse_bvh(text))
    layout = layout or csv_header_layout(text)
    if not layout:
        raise ParseError("%s: CSV without a coil header; pass --layout" % path)
    return parse_coil_csv(text, layout, frame_period)


def _add_ema_args(p, flag="--ema"):
    p.add_argument(flag, dest="ema", required=True, help="EST ascii, CSV or BVH coil recording")
    p.add_argument("--layout", help="comma-separated coil names for a header-less CSV")
    p.add_argument("--frame-period", type=float, default=DEFAULT_FRAME_PERIOD,
                   help="seconds per frame when the CSV has no time column (default %(default)s)")


def _load_ema(args):
    return read_trajectories(args.ema, _coil_list(args.layout), args.frame_period)


def parse_plane(spec, trajectories=None, refs=("nose", "left_ear", "right_ear")):
    """``x=0`` style axis plane, six numbers ``px,py,pz,nx,ny,nz``, or ``auto``."""
    spec = spec.strip()
    if spec == "auto":
        if trajectories is None:
            raise ValueError("plane 'auto' needs reference coils in the recording")
        return midsagittal_plane(trajectories, *refs)
    if "=" in spec:
        axis, value = spec.split("=", 1)
        axis = axis.strip().lower()
        if axis not in ("x", "y", "z"):
            raise ParseError("plane axis must be x, y or z, got %r" % axis)
        try:
            return Plane.axis(axis, float(value))
        except ValueError:
            raise ParseError("bad plane offset %r" % value) from None
    try:
        values = [float(v) for v in spec.replace(",", " ").split()]
    except ValueError:
        raise ParseError("bad plane spec %r" % spec) from None
    if len(values) != 6:
        raise ParseError("plane spec needs 6 numbers (point, normal), got %d" % len(values))
    return Plane(values[:3], values[3:])


# ---------------------------------------------------------------- subcommands

def cmd_convert(args):
    traj = _load_ema(args)
    if args.out.lower().endswith(".csv"):
        atomic_write(args.out, write_coil_csv(traj))
    else:
        atomic_write(args.out, write_bvh(to_bvh(traj, RotationMode(args.rotations))))
    print("%s: %d coils, %d frames, %d dropped rows" % (args.out, len(traj.coils), traj.frame_count, len(traj.dropped)))


def cmd_palate(args):
    traj = _load_ema(args)
    plane = parse_plane(args.plane, traj, (args.nose, args.left_ear, args.right_ear))
    up = tuple(float(v) for v in args.up.split(","))
    contour = palate_contour(traj, _coil_list(args.coils), plane, args.subsample, up)
    atomic_write(args.out, mesh_text(contour.as_mesh(), args.out))
    print("%s: %d contour points" % (args.out, len(contour)))


def cmd_register(args):
    src = read_mesh(args.src).vertices
    dst_mesh = read_mesh(args.dst, triangulate=True)
    if args.landmarks:
        a, b = load_landmarks(_read(args.landmarks))
        init = umeyama_rigid(a, b)
    else:
        init = RigidTransform.identity()
    if dst_mesh.face_count == 0:
        # point-set target: correspondence by index
        transform = umeyama_rigid(src, dst_mesh.vertices)
        rms = float(np.sqrt(np.mean(np.sum((transform.apply(src) - dst_mesh.vertices) ** 2, axis=1))))
    else:
        result = icp_point_to_mesh(src, dst_mesh, init, args.max_iterations, args.tolerance, MeshQuery(dst_mesh))
        transform, rms = result.transform, result.rms
    atomic_write(args.out, transform.to_text())
    print("%s: rms %.6f mm, rotation %.6f deg" % (args.out, rms, np.degrees(transform.rotation_angle())))


def _optional_mesh(path):
    return None if path is None else read_mesh(path, triangulate=True)


def cmd_build_rig(args):
    tongue = read_mesh(args.mesh, triangulate=True)
    traj = _load_ema(args)
    cfg = load_rig_config(_read(args.config))
    if not 0 <= args.frame < traj.frame_count:
        raise ValueError("bind frame %d outside 0..%d" % (args.frame, traj.frame_count - 1))
    rig = build_rig(tongue, traj.frame(args.frame), cfg,
                    _optional_mesh(args.mandible), _optional_mesh(args.maxilla))
    atomic_write(args.out, rig_to_text(rig))
    print("%s: %d joints, %d unskinned vertices, spline length %.3f mm"
          % (args.out, rig.joint_count, len(rig.unskinned), rig.bind_length))


def _window(text):
    if not text:
        return None
    start, _, stop = text.partition(":")
    return int(start or 0), int(stop)


def cmd_animate(args):
    rig = rig_from_text(_read(args.rig))
    traj = _load_ema(args)
    seq = animate_utterance(rig, traj, _window(args.frames), args.workers)
    tracked = None
    if args.format == "vertex-csv":
        coils = _coil_list(args.track) or tuple(rig.config.hooks)
        tracked = sorted(set(select_tracking_vertices(rig, coils).values()))
    written = export_sequence(seq, args.format, args.out_dir, tracked, traj.dropped)
    print("%s: %d frames, %d files, %d gaps" % (args.out_dir, seq.frame_count, len(written), len(seq.gaps)))


def _sibling(path, ext):
    root, _ = os.path.splitext(path)
    return root + ext


def cmd_evaluate(args):
    rig = rig_from_text(_read(args.rig))
    traj = _load_ema(args)
    seq = load_sequence(args.seq)
    coils = _coil_list(args.coils) or tuple(rig.config.hooks)
    pairs = select_tracking_vertices(rig, coils)
    report = trajectory_correlation(seq, traj, pairs)
    _write_report(report, args.out, seq, traj, pairs, args.no_figure)


def _write_report(report, out, seq, traj, pairs, no_figure=False):
    atomic_write(out, report.to_json())
    atomic_write(_sibling(out, ".csv"), report.to_csv())
    if not no_figure:
        from .plotting import save_figure, trajectory_figure

        png = _sibling(out, ".png")
        tmp = png + ".part.png"
        save_figure(trajectory_figure(seq, traj, pairs, report), tmp)
        os.replace(tmp, png)
    print("coil,axis,vertex,r")
    for e in report.entries:
        print("%s,%s,%d,%s" % (e.coil, e.axis, e.vertex, "nan" if not e.defined else "%.4f" % e.r))
    print("mean_r=%.4f undefined=%d" % (report.mean, len(report.undefined)))


def cmd_synth(args):
    from . import phantom

    if args.spec:
        spec = synth_spec_from_dict(load_json(_read(args.spec), args.spec))
    else:
        spec = phantom.synth_spec(frames=args.frames, rate=args.rate)
    traj = synth_trajectories(spec)
    if args.noise > 0:
        rng = np.random.default_rng(args.seed)
        traj = CoilTrajectorySet(traj.coils, traj.timestamps,
                                 traj.positions + rng.normal(0.0, args.noise, traj.positions.shape), traj.normals)
    atomic_write(args.out, write_coil_csv(traj))
    if args.phantom_dir:
        os.makedirs(args.phantom_dir, exist_ok=True)
        for name, mesh in phantom.assets().items():
            atomic_write(os.path.join(args.phantom_dir, name + ".obj"), save_obj(mesh))
        atomic_write(os.path.join(args.phantom_dir, "rig-config.json"), dump_json(rig_config_to_dict(phantom.rig_config())))
        atomic_write(os.path.join(args.phantom_dir, "synth-spec.json"), dump_json(synth_spec_to_dict(spec)))
    print("%s: %d coils, %d frames" % (args.out, len(traj.coils), traj.frame_count))


def cmd_run(args):
    cfg_path = os.path.abspath(args.config)
    pc = load_pipeline_config(_read(cfg_path), os.path.dirname(cfg_path))
    traj = read_trajectories(pc.ema, pc.layout)
    os.makedirs(pc.out_dir, exist_ok=True)
    out = lambda name: os.path.join(pc.out_dir, name)  # noqa: E731
    atomic_write(out("motion.bvh"), write_bvh(to_bvh(traj, RotationMode(pc.rotations))))
    if pc.palate_coils:
        contour = palate_contour(traj, pc.palate_coils, parse_plane(pc.plane, traj), pc.palate_subsample)
        atomic_write(out("palate.ply"), mesh_text(contour.as_mesh(), "palate.ply"))
    rig = build_rig(read_mesh(pc.tongue, triangulate=True), traj.frame(pc.bind_frame), pc.rig,
                    _optional_mesh(pc.mandible), _optional_mesh(pc.maxilla))
    atomic_write(out("rig.json"), rig_to_text(rig))
    seq = animate_utterance(rig, traj, pc.frame_window, pc.workers)
    pairs = select_tracking_vertices(rig, pc.track_coils)
    tracked = sorted(set(pairs.values())) if pc.export_format == "vertex-csv" else None
    export_sequence(seq, pc.export_format, out("sequence"), tracked, traj.dropped)
    _write_report(trajectory_correlation(seq, traj, pairs), out("report.json"), seq, traj, pairs)


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="emarig", description="EMA coil data to rigged tongue animation.")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized steps (default %(default)s)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="coil recording to BVH (or CSV)")
    _add_ema_args(p, "--in")
    p.add_argument("--out", required=True)
    p.add_argument("--rotations", choices=[m.value for m in RotationMode], default="normals")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("palate", help="palate contour from tongue-coil positions")
    _add_ema_args(p, "--in")
    p.add_argument("--coils", default="T1,T2,T3")
    p.add_argument("--plane", default="x=0", help="'x=0', six numbers 'px,py,pz,nx,ny,nz', or 'auto'")
    p.add_argument("--subsample", type=int, default=1)
    p.add_argument("--up", default="0,1,0", help="vertical axis used to pick the upper branch")
    p.add_argument("--nose", default="nose")
    p.add_argument("--left-ear", default="left_ear")
    p.add_argument("--right-ear", default="right_ear")
    p.add_argument("--out", required=True, help=".ply or .obj")
    p.set_defaults(func=cmd_palate)

    p = sub.add_parser("register", help="rigidly align a point set to a mesh")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--landmarks", help="JSON with paired src/dst landmark lists")
    p.add_argument("--max-iterations", type=int, default=2000)
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("build-rig", help="rig a tongue mesh against a bind frame")
    p.add_argument("--mesh", required=True)
    _add_ema_args(p)
    p.add_argument("--config", required=True)
    p.add_argument("--frame", type=int, default=0, help="bind frame index")
    p.add_argument("--mandible")
    p.add_argument("--maxilla")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_rig)

    p = sub.add_parser("animate", help="deform the rig through a recording")
    p.add_argument("--rig", required=True)
    _add_ema_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=FORMATS, default="obj-sequence")
    p.add_argument("--frames", help="window start:stop")
    p.add_argument("--track", help="coils whose nearest vertices go into a vertex-csv export")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("evaluate", help="coil vs. vertex trajectory correlation")
    p.add_argument("--rig", required=True)
    _add_ema_args(p)
    p.add_argument("--seq", required=True, help="directory written by 'animate'")
    p.add_argument("--coils", help="coils to evaluate (default: hooked coils)")
    p.add_argument("--out", required=True, help="JSON report; .csv and .png are written alongside")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="synthetic sinusoidal coil recording")
    p.add_argument("--spec", help="synth spec JSON (default: built-in phantom motion)")
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--rate", type=float, default=200.0)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian position noise, mm (uses --seed)")
    p.add_argument("--phantom-dir", help="also write phantom meshes and a matching rig config here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="whole pipeline from one config document")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except OSError as exc:
        print("emarig: I/O error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except (DegenerateError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print("emarig: numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print("emarig: invalid input: %s" % msg, file=sys.stderr)
        return EXIT_PARSE
    return 0


if __name__ == "__main__":
    sys.exit(main())
