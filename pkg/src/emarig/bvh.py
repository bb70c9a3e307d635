"""BVH documents with one six-channel ROOT per EMA coil.

Each coil becomes an independent ROOT whose OFFSET is the coil's position in
the first frame, closed by an End Site one unit along +Z. In ``normals`` mode
the three rotation slots carry the raw orientation normal; a ``# ROTATIONS``
comment in the HIERARCHY records which convention the file uses.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .trackio import DEFAULT_FRAME_PERIOD, CoilTrajectorySet

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")
CHANNELS = POSITION_CHANNELS + ROTATION_CHANNELS
END_SITE = (0.0, 0.0, 1.0)


class RotationMode(str, enum.Enum):
    NORMALS = "normals"
    EULER = "euler"


@dataclass(frozen=True)
class BvhRoot:
    name: str
    offset: tuple
    channels: tuple = CHANNELS
    end_site: tuple = END_SITE

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        object.__setattr__(self, "end_site", tuple(float(v) for v in self.end_site))
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError("root name must be a non-empty token, got %r" % self.name)
        if len(self.offset) != 3 or len(self.end_site) != 3:
            raise ValueError("offsets must be 3-vectors")
        if len(self.channels) != 6:
            raise ValueError("root %s: expected 6 channels, got %d" % (self.name, len(self.channels)))
        if set(self.channels[:3]) != set(POSITION_CHANNELS) or set(self.channels[3:]) != set(ROTATION_CHANNELS):
            raise ValueError("root %s: channels must be 3 position then 3 rotation labels" % self.name)
        if abs(math.sqrt(sum(v * v for v in self.end_site)) - 1.0) > 1e-9:
            raise ValueError("root %s: End Site offset must be a unit vector" % self.name)


@dataclass(frozen=True, eq=False)
class BvhDocument:
    """Skeleton roots plus a ``(frames, 6 * roots)`` motion table."""

    roots: tuple
    motion: np.ndarray
    frame_time: float
    rotation_mode: RotationMode = RotationMode.NORMALS

    def __post_init__(self):
        roots = tuple(self.roots)
        motion = np.array(self.motion, dtype=float)
        if motion.ndim != 2:
            motion = motion.reshape(len(motion), -1)
        names = [r.name for r in roots]
        if len(set(names)) != len(names):
            raise ValueError("root names must be unique")
        if motion.shape[1] != sum(len(r.channels) for r in roots):
            raise ValueError("motion table has %d columns for %d roots" % (motion.shape[1], len(roots)))
        if not self.frame_time > 0:
            raise ValueError("frame_time must be positive")
        motion.setflags(write=False)
        object.__setattr__(self, "roots", roots)
        object.__setattr__(self, "motion", motion)
        object.__setattr__(self, "frame_time", float(self.frame_time))
        object.__setattr__(self, "rotation_mode", RotationMode(self.rotation_mode))

    @property
    def frame_count(self):
        return self.motion.shape[0]

    def channel_block(self, name):
        """``(frames, 6)`` motion columns of one root, in its channel order."""
        k = [r.name for r in self.roots].index(name)
        return self.motion[:, 6 * k: 6 * k + 6]

    def allclose(self, other, atol=1e-4):
        return (
            [(r.name, r.channels) for r in self.roots] == [(r.name, r.channels) for r in other.roots]
            and self.rotation_mode == other.rotation_mode
            and self.motion.shape == other.motion.shape
            and abs(self.frame_time - other.frame_time) <= atol
            and all(
                np.allclose(a.offset, b.offset, atol=atol, rtol=0)
                and np.allclose(a.end_site, b.end_site, atol=atol, rtol=0)
                for a, b in zip(self.roots, other.roots)
            )
            and np.allclose(self.motion, other.motion, atol=atol, rtol=0)
        )


def normal_to_euler(n):
    """Angles (x, y, z) in degrees with ``Ry(y) Rx(x) (0,0,1) = n`` and z = 0."""
    n = np.asarray(n, float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("normal must have unit length, |n| = %g" % np.linalg.norm(n))
    # -asin(ny) written via atan2: same angle on unit vectors, but stays accurate near the poles
    theta_x = -math.atan2(n[1], math.hypot(n[0], n[2]))
    theta_y = math.atan2(n[0], n[2])
    return (math.degrees(theta_x), math.degrees(theta_y), 0.0)


def euler_to_normal(angles):
    """Inverse of :func:`normal_to_euler`; the z angle does not move the reference axis."""
    ax, ay = math.radians(angles[0]), math.radians(angles[1])
    return np.array([math.cos(ax) * math.sin(ay), -math.sin(ax), math.cos(ax) * math.cos(ay)])


def _frame_time(timestamps):
    if len(timestamps) < 2:
        return DEFAULT_FRAME_PERIOD
    return float(np.median(np.diff(timestamps)))


def to_bvh(trajectories, mode=RotationMode.NORMALS):
    """Encode each coil as its own ROOT; offsets come from frame 0."""
    mode = RotationMode(mode)
    if trajectories.frame_count == 0 or not trajectories.coils:
        raise ValueError("cannot encode an empty trajectory set")
    pos, nrm = trajectories.positions, trajectories.normals
    if mode is RotationMode.NORMALS:
        rot = nrm
    else:
        # slot order Zrotation Xrotation Yrotation
        unit = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
        ex = -np.degrees(np.arctan2(unit[..., 1], np.hypot(unit[..., 0], unit[..., 2])))
        ey = np.degrees(np.arctan2(unit[..., 0], unit[..., 2]))
        rot = np.stack([np.zeros_like(ex), ex, ey], axis=-1)
    motion = np.concatenate([pos, rot], axis=-1).reshape(trajectories.frame_count, -1)
    roots = [BvhRoot(name, pos[0, k]) for k, name in enumerate(trajectories.coils)]
    return BvhDocument(tuple(roots), motion, _frame_time(trajectories.timestamps), mode)


def from_bvh(doc):
    """Decode a coil-per-ROOT document back into trajectories."""
    frames = doc.frame_count
    pos = np.empty((frames, len(doc.roots), 3))
    nrm = np.empty((frames, len(doc.roots), 3))
    for k, root in enumerate(doc.roots):
        block = doc.channel_block(root.name)
        col = {label: block[:, i] for i, label in enumerate(root.channels)}
        pos[:, k] = np.stack([col[c] for c in POSITION_CHANNELS], axis=-1)
        if doc.rotation_mode is RotationMode.NORMALS:
            raw = block[:, 3:6]
        else:
            ax, ay = np.radians(col["Xrotation"]), np.radians(col["Yrotation"])
            raw = np.stack([np.cos(ax) * np.sin(ay), -np.sin(ax), np.cos(ax) * np.cos(ay)], axis=-1)
        lengths = np.linalg.norm(raw, axis=-1, keepdims=True)
        nrm[:, k] = raw / np.where(lengths > 0, lengths, 1.0)
    times = np.arange(frames) * doc.frame_time
    return CoilTrajectorySet(tuple(r.name for r in doc.roots), times, pos, nrm)


def _fmt(values):
    return " ".join("%.6f" % (v + 0.0) for v in values)


def write_bvh(doc):
    out = io.StringIO()
    out.write("HIERARCHY\n")
    out.write("# ROTATIONS %s\n" % doc.rotation_mode.value)
    for root in doc.roots:
        out.write("ROOT %s\n{\n" % root.name)
        out.write("\tOFFSET %s\n" % _fmt(root.offset))
        out.write("\tCHANNELS %d %s\n" % (len(root.channels), " ".join(root.channels)))
        out.write("\tEnd Site\n\t{\n")
        out.write("\t\tOFFSET %s\n" % _fmt(root.end_site))
        out.write("\t}\n}\n")
    out.write("MOTION\n")
    out.write("Frames: %d\n" % doc.frame_count)
    out.write("Frame Time: %.6f\n" % doc.frame_time)
    for row in doc.motion:
        out.write(_fmt(row) + "\n")
    return out.getvalue()


class _Lines:
    """Non-blank lines with 1-based numbers; ``#`` lines are collected apart."""

    def __init__(self, text):
        self.items = []
        self.comments = []
        for i, raw in enumerate(text.splitlines(), start=1):
            s = raw.strip()
            if not s:
                continue
            if s.startswith("#"):
                self.comments.append((i, s[1:].strip()))
                continue
            self.items.append((i, s))
        self.pos = 0
        self.last = 0

    def next(self, what):
        if self.pos >= len(self.items):
            raise ParseError("unexpected end of file, expected %s" % what, self.last or None)
        lineno, s = self.items[self.pos]
        self.pos += 1
        self.last = lineno
        return lineno, s

    def expect(self, token):
        lineno, s = self.next(token)
        if s != token:
            raise ParseError("expected %r, found %r" % (token, s), lineno)

    def done(self):
        return self.pos >= len(self.items)


def _floats(tokens, lineno, n=None):
    if n is not None and len(tokens) != n:
        raise ParseError("expected %d numbers, found %d" % (n, len(tokens)), lineno)
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _unit_within_rounding(v, half_ulp=0.4995e-6):
    """A unit vector that still prints as ``v`` at 6 decimals, if one exists.

    Plain normalization of a 6-decimal vector can move it into a different
    rounding cell, which would break write/parse/write byte stability. The
    norm is continuous on the rounding box, so walking from its point nearest
    the origin to its farthest corner crosses the unit sphere when any point
    of the box does.
    """
    lo, hi = v - half_ulp, v + half_ulp
    near = np.clip(0.0, lo, hi)
    far = np.where(np.abs(lo) > np.abs(hi), lo, hi)
    d = far - near
    a, b, c = d @ d, 2 * near @ d, near @ near - 1.0
    disc = b * b - 4 * a * c
    if a > 0 and c <= 0 <= disc:
        s = (-b + np.sqrt(disc)) / (2 * a)
        u = near + min(max(s, 0.0), 1.0) * d
        u = u / np.linalg.norm(u)
        if np.all(np.abs(u - v) <= 0.5e-6):
            return u
    return v / np.linalg.norm(v)


def _parse_offset(lines):
    lineno, s = lines.next("OFFSET")
    tokens = s.split()
    if tokens[0] != "OFFSET":
        raise ParseError("expected OFFSET, found %r" % tokens[0], lineno)
    return _floats(tokens[1:], lineno, 3)


def _parse_root(lines, name, root_line):
    lines.expect("{")
    offset = _parse_offset(lines)
    lineno, s = lines.next("CHANNELS")
    tokens = s.split()
    if tokens[0] != "CHANNELS":
        raise ParseError("expected CHANNELS, found %r" % tokens[0], lineno)
    try:
        count = int(tokens[1])
    except (IndexError, ValueError):
        raise ParseError("bad CHANNELS count", lineno) from None
    labels = tuple(tokens[2:])
    if len(labels) != count:
        raise ParseError("CHANNELS declares %d labels but lists %d" % (count, len(labels)), lineno)
    if count != 6:
        raise ParseError("unsupported ROOT shape: %s has %d channels, only 6 are supported" % (name, count), lineno)
    lineno, s = lines.next("End Site")
    if s.split()[0] == "JOINT":
        raise ParseError("nested JOINT hierarchies are not supported", lineno)
    if s != "End Site":
        raise ParseError("unknown keyword %r" % s.split()[0], lineno)
    lines.expect("{")
    end_site = np.array(_parse_offset(lines))
    lines.expect("}")
    lineno, s = lines.next("}")
    if s.split()[0] == "JOINT":
        raise ParseError("nested JOINT hierarchies are not supported", lineno)
    if s != "}":
        raise ParseError("expected '}', found %r" % s, lineno)
    if abs(np.linalg.norm(end_site) - 1.0) > 1e-4:
        raise ParseError("End Site offset of %s is not a unit vector" % name, root_line)
    try:
        return BvhRoot(name, offset, labels, tuple(_unit_within_rounding(end_site)))
    except ValueError as exc:
        raise ParseError(str(exc), root_line) from None


def parse_bvh(text):
    if not isinstance(text, str):
        text = text.read()
    lines = _Lines(text)
    lines.expect("HIERARCHY")
    roots = []
    while True:
        lineno, s = lines.next("ROOT or MOTION")
        tokens = s.split()
        if tokens[0] == "MOTION":
            break
        if tokens[0] == "JOINT":
            raise ParseError("nested JOINT hierarchies are not supported", lineno)
        if tokens[0] != "ROOT":
            raise ParseError("unknown keyword %r" % tokens[0], lineno)
        if len(tokens) != 2:
            raise ParseError("ROOT needs exactly one name", lineno)
        if any(r.name == tokens[1] for r in roots):
            raise ParseError("duplicate ROOT %s" % tokens[1], lineno)
        roots.append(_parse_root(lines, tokens[1], lineno))
    if not roots:
        raise ParseError("no ROOT objects in HIERARCHY", lineno)

    mode = RotationMode.EULER
    for cl, comment in lines.comments:
        key, _, value = comment.partition(" ")
        if key == "ROTATIONS":
            try:
                mode = RotationMode(value.strip())
            except ValueError:
                raise ParseError("unknown rotation convention %r" % value.strip(), cl) from None

    lineno, s = lines.next("Frames:")
    if not s.startswith("Frames:"):
        raise ParseError("expected 'Frames:'", lineno)
    try:
        frames = int(s[len("Frames:"):])
    except ValueError:
        raise ParseError("bad frame count", lineno) from None
    lineno, s = lines.next("Frame Time:")
    if not s.startswith("Frame Time:"):
        raise ParseError("expected 'Frame Time:'", lineno)
    frame_time = _floats(s[len("Frame Time:"):].split(), lineno, 1)[0]
    if not frame_time > 0:
        raise ParseError("Frame Time must be positive", lineno)

    width = 6 * len(roots)
    rows = []
    while not lines.done():
        lineno, s = lines.next("motion row")
        if len(rows) == frames:
            raise ParseError("more motion rows than the declared %d frames" % frames, lineno)
        rows.append(_floats(s.split(), lineno, width))
    if len(rows) != frames:
        raise ParseError("declared %d frames but found %d motion rows" % (frames, len(rows)), lines.last or None)
    motion = np.asarray(rows, float).reshape(frames, width)
    return BvhDocument(tuple(roots), motion, frame_time, mode)
