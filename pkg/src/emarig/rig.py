"""Coil-driven tongue rig.

A clamped cubic B-spline runs just under the tongue surface from root to
tip. Hooked control points follow EMA coils with their bind-time offsets; a
chain of joints is laid along the spline at equal arc-length stations and
oriented by parallel transport; envelope capsules around the joints give the
skinning weights. The mandible rotates about a hinge axis tracking the jaw
coil.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateError
from .mesh import MeshQuery, TriMesh, face_normals, triangulate
from .register import RigidTransform, axis_angle_matrix

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


# ---------------------------------------------------------------- B-spline

def clamped_uniform_knots(n_ctrl, degree=3):
    inner = np.linspace(0.0, 1.0, n_ctrl - degree + 1)
    return np.concatenate([np.zeros(degree), inner, np.ones(degree)])


def _de_boor(knots, ctrl, degree, u):
    u = np.atleast_1d(np.asarray(u, float))
    n = len(ctrl)
    k = np.searchsorted(knots, u, side="right") - 1
    k = np.clip(k, degree, n - 1)
    d = ctrl[k[:, None] - degree + np.arange(degree + 1)]  # (m, p+1, 3)
    for r in range(1, degree + 1):
        for j in range(degree, r - 1, -1):
            left = knots[j + k - degree]
            right = knots[j + 1 + k - r]
            alpha = ((u - left) / (right - left))[:, None]
            d[:, j] = (1.0 - alpha) * d[:, j - 1] + alpha * d[:, j]
    return d[:, degree]


@dataclass(frozen=True, eq=False)
class Spline:
    """Clamped uniform B-spline (default cubic) through its end control points."""

    control_points: np.ndarray
    degree: int = 3
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cp = np.array(self.control_points, float).reshape(-1, 3)
        if len(cp) < self.degree + 1:
            raise ValueError("a degree-%d spline needs at least %d control points" % (self.degree, self.degree + 1))
        cp.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "knots", clamped_uniform_knots(len(cp), self.degree))
        d = self.degree
        dcp = d * np.diff(cp, axis=0) / (self.knots[d + 1: d + len(cp)] - self.knots[1: len(cp)])[:, None]
        object.__setattr__(self, "_dctrl", dcp)

    def __call__(self, u):
        """Points at parameters ``u`` in [0, 1]; scalar in, 3-vector out."""
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(np.asarray(u, float))
        if np.any((u < 0) | (u > 1)):
            raise ValueError("spline parameter outside [0, 1]")
        pts = _de_boor(self.knots, self.control_points, self.degree, u)
        return pts[0] if scalar else pts

    def derivative(self, u):
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(np.asarray(u, float))
        d = _de_boor(self.knots[1:-1], self._dctrl, self.degree - 1, u)
        return d[0] if scalar else d

    def speed(self, u):
        return np.linalg.norm(self.derivative(u), axis=-1)

    def transformed(self, rotation, translation):
        return Spline(self.control_points @ np.asarray(rotation, float).T + translation, self.degree)


def _gl(f, a, b):
    """10-point Gauss-Legendre on each interval [a_i, b_i] (arrays)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[..., None] + half[..., None] * _GL_NODES
    return half * (f(x.reshape(-1)).reshape(x.shape) @ _GL_WEIGHTS)


def adaptive_gauss_legendre(f, a, b, rtol=1e-10, _whole=None, _depth=0):
    """Integrate vectorized ``f`` over each [a_i, b_i], bisecting intervals
    until the two halves agree with the whole to ``rtol``."""
    a = np.atleast_1d(np.asarray(a, float))
    b = np.atleast_1d(np.asarray(b, float))
    whole = _gl(f, a, b) if _whole is None else _whole
    m = 0.5 * (a + b)
    halves = _gl(f, np.concatenate([a, m]), np.concatenate([m, b]))
    left, right = halves[: len(a)], halves[len(a):]
    est = left + right
    bad = np.abs(est - whole) > rtol * np.abs(est)
    if bad.any() and _depth < 30:
        est[bad] = (adaptive_gauss_legendre(f, a[bad], m[bad], rtol, left[bad], _depth + 1)
                    + adaptive_gauss_legendre(f, m[bad], b[bad], rtol, right[bad], _depth + 1))
    return est


class ArcLengthTable:
    """Cumulative arc length over a knot-aligned parameter grid."""

    def __init__(self, spline, per_span=8, rtol=1e-10):
        self.spline = spline
        breaks = np.unique(spline.knots)
        grid = np.unique(np.concatenate([np.linspace(a, b, per_span + 1) for a, b in zip(breaks[:-1], breaks[1:])]))
        pieces = adaptive_gauss_legendre(spline.speed, grid[:-1], grid[1:], rtol)
        self.grid = grid
        self.cumulative = np.concatenate([[0.0], np.cumsum(pieces)])

    @property
    def length(self):
        return float(self.cumulative[-1])

    def parameter_at(self, lengths):
        """Invert arc length by safeguarded Newton inside each grid cell."""
        lengths = np.atleast_1d(np.asarray(lengths, float))
        total = self.length
        if np.any((lengths < -1e-9 * max(total, 1)) | (lengths > total * (1 + 1e-12) + 1e-12)):
            raise ValueError("arc length outside [0, %g]" % total)
        ell = np.clip(lengths, 0.0, total)
        cell = np.minimum(np.searchsorted(self.cumulative, ell, side="right") - 1, len(self.grid) - 2)
        a, b = self.grid[cell], self.grid[cell + 1]
        target = ell - self.cumulative[cell]
        seg = self.cumulative[cell + 1] - self.cumulative[cell]
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(seg > 0, a + (b - a) * target / seg, a)
        lo, hi = a.copy(), b.copy()
        tol = 1e-12 * max(total, 1.0)
        for _ in range(60):
            g = _gl(self.spline.speed, a, u) - target
            hi = np.where(g > 0, u, hi)
            lo = np.where(g > 0, lo, u)
            done = (np.abs(g) <= tol) | (seg <= 0)
            if done.all():
                break
            sp = self.spline.speed(u)
            with np.errstate(invalid="ignore", divide="ignore"):
                nxt = u - g / sp
            ok = (sp > 0) & (nxt > lo) & (nxt < hi)
            u = np.where(done, u, np.where(ok, nxt, 0.5 * (lo + hi)))
        return u


def arc_length(spline):
    return ArcLengthTable(spline).length


def point_at_arclength(spline, ell):
    table = ArcLengthTable(spline)
    return spline(table.parameter_at(ell)[0])


# ---------------------------------------------------------------- frames

def minimal_rotation(a, b):
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        perp = np.cross(a, np.eye(3)[np.argmin(np.abs(a))])
        return axis_angle_matrix(perp, np.pi)
    return axis_angle_matrix(axis / s, np.arctan2(s, c))


def _frame(tangent, reference):
    z = tangent / np.linalg.norm(tangent)
    x = reference - np.dot(reference, z) * z
    x /= np.linalg.norm(x)
    return np.column_stack([x, np.cross(z, x), z])


def initial_frame(tangent, reference=(0.0, 1.0, 0.0)):
    """Frame with Z along ``tangent`` and X toward ``reference``."""
    t = np.asarray(tangent, float)
    ref = np.asarray(reference, float)
    if np.linalg.norm(np.cross(t / np.linalg.norm(t), ref / np.linalg.norm(ref))) < 1e-6:
        ref = np.eye(3)[np.argmin(np.abs(t))]
    return _frame(t, ref)


def transport_frames(points, tangents, first):
    """Rotation-minimizing frames along sampled points (double reflection).

    ``tangents`` must be unit vectors; returns ``(n, 3, 3)`` frames with
    columns (x, y, z = tangent).
    """
    v1 = np.diff(points, axis=0)
    c1 = np.einsum("ij,ij->i", v1, v1)
    t0, t1 = tangents[:-1], tangents[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        k1 = np.where(c1 > 0, 2.0 / c1, 0.0)
        t_l = t0 - (k1 * np.einsum("ij,ij->i", v1, t0))[:, None] * v1
        v2 = t1 - t_l
        c2 = np.einsum("ij,ij->i", v2, v2)
        k2 = np.where(c2 > 0, 2.0 / c2, 0.0)
    eye = np.eye(3)
    h1 = eye - k1[:, None, None] * v1[:, :, None] * v1[:, None, :]
    h2 = eye - k2[:, None, None] * v2[:, :, None] * v2[:, None, :]
    steps = h2 @ h1
    rs = np.empty_like(points)
    rs[0] = first[:, 0]
    r = rs[0]
    for i, q in enumerate(steps, start=1):
        r = q @ r
        rs[i] = r
    rs -= np.einsum("ij,ij->i", rs, tangents)[:, None] * tangents
    rs /= np.linalg.norm(rs, axis=1, keepdims=True)
    frames = np.stack([rs, np.cross(tangents, rs), tangents], axis=-1)
    frames[0] = first
    return frames


# ---------------------------------------------------------------- rig types

@dataclass(frozen=True)
class Hook:
    coil: str
    index: int
    offset: tuple


@dataclass(frozen=True)
class Envelope:
    head: np.ndarray
    tail: np.ndarray
    r_in: float
    r_out: float

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ValueError("envelope radii need 0 < r_in < r_out")


@dataclass(frozen=True)
class Hinge:
    point: tuple
    direction: tuple
    coil: str = "jaw"

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        if not np.linalg.norm(d) > 0:
            raise ValueError("hinge direction must be non-zero")
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))
        object.__setattr__(self, "direction", tuple(float(v) for v in d / np.linalg.norm(d)))


@dataclass(frozen=True)
class RigConfig:
    """Rigging parameters. ``hooks`` maps coil name -> control-point index
    (1..len(hooks), root side first); anchors are control points 0 and -1."""

    hooks: dict
    root_anchor: tuple
    tip_anchor: tuple
    anchor_coils: dict = field(default_factory=dict)
    joint_count: int = 8
    r_in: float = 5.0
    r_out: float = 15.0
    depth: object = 2.0
    smoothstep: bool = False
    hinge: Hinge | None = None
    roll_reference: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.joint_count < 2:
            raise ValueError("joint_count must be >= 2")
        if not 0 < self.r_in < self.r_out:
            raise ValueError("need 0 < r_in < r_out")
        idx = sorted(self.hooks.values())
        if idx != list(range(1, len(self.hooks) + 1)):
            raise ValueError("hook indices must be exactly 1..%d, got %s" % (len(self.hooks), idx))
        if set(self.anchor_coils) - {"root", "tip"}:
            raise ValueError("anchor_coils keys must be 'root' and/or 'tip'")
        if len(self.hooks) + 2 < 4:
            raise ValueError("a cubic spline needs at least 2 hooked coils plus 2 anchors")

    @property
    def coils(self):
        """Every coil the rig reads, hooks first in control-point order."""
        names = [c for c, _ in sorted(self.hooks.items(), key=lambda kv: kv[1])]
        names += [c for c in self.anchor_coils.values() if c and c not in names]
        if self.hinge is not None and self.hinge.coil not in names:
            names.append(self.hinge.coil)
        return tuple(names)


class JointPoses(NamedTuple):
    """``matrices``: (J, 4, 4) joint-to-world; ``tails``: (J, 3); plus the driving spline."""

    matrices: np.ndarray
    tails: np.ndarray
    spline: Spline
    stations: np.ndarray


class Weights(NamedTuple):
    matrix: np.ndarray
    unskinned: tuple


@dataclass(frozen=True, eq=False)
class Rig:
    tongue: TriMesh
    config: RigConfig
    bind_frame: dict
    spline: Spline
    hooks: tuple
    bind_stations: np.ndarray
    bind_root_frame: np.ndarray
    bind_poses: JointPoses
    envelopes: tuple
    weights: np.ndarray
    unskinned: tuple
    mandible: TriMesh | None = None
    maxilla: TriMesh | None = None

    @property
    def joint_count(self):
        return self.config.joint_count

    @property
    def bind_length(self):
        return float(self.bind_stations[-1])

    @property
    def coils(self):
        return self.config.coils


# ---------------------------------------------------------------- weights

def segment_distance(points, head, tail):
    """Distance from each point to the segment head-tail."""
    points = np.asarray(points, float)
    seg = tail - head
    ll = seg @ seg
    t = np.zeros(len(points)) if ll == 0 else np.clip((points - head) @ seg / ll, 0.0, 1.0)
    return np.linalg.norm(points - (head + t[:, None] * seg), axis=1)


def envelope_falloff(d, r_in, r_out, smoothstep=False):
    """Raw weight at capsule distance ``d``: 1 inside r_in, 0 beyond r_out, linear between."""
    w = np.clip((r_out - np.asarray(d, float)) / (r_out - r_in), 0.0, 1.0)
    return w * w * (3.0 - 2.0 * w) if smoothstep else w


def envelope_weights(envelopes, mesh, smoothstep=False):
    """Per-vertex joint weights from capsule distance falloff, rows normalized."""
    verts = mesh.vertices if hasattr(mesh, "vertices") else np.asarray(mesh, float)
    raw = np.zeros((len(verts), len(envelopes)))
    for j, env in enumerate(envelopes):
        d = segment_distance(verts, np.asarray(env.head, float), np.asarray(env.tail, float))
        raw[:, j] = envelope_falloff(d, env.r_in, env.r_out, smoothstep)
    total = raw.sum(axis=1)
    skinned = total > 0
    raw[skinned] /= total[skinned, None]
    return Weights(raw, tuple(int(i) for i in np.flatnonzero(~skinned)))


# ---------------------------------------------------------------- building

def _surface_offset(query, mesh_centroid, coil, depth):
    if np.ndim(depth) == 1:
        return np.asarray(depth, float)
    point, face, _ = query.closest(coil[None])
    n = face_normals(query.mesh)[face[0]]
    if np.dot(n, point[0] - mesh_centroid) < 0:
        n = -n
    return -float(depth) * n


def _chain(spline, stations, root_frame, table=None, substeps=8):
    """Joint matrices at ``stations[:-1]``, tails at ``stations[1:]``."""
    table = table or ArcLengthTable(spline)
    u_st = table.parameter_at(stations)
    u = np.concatenate([np.linspace(a, b, substeps, endpoint=False) for a, b in zip(u_st[:-1], u_st[1:])]
                       + [u_st[-1:]])
    u = np.clip(u, 0.0, 1.0)
    pts = spline(u)
    tan = spline.derivative(u)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    first = minimal_rotation(root_frame[:, 2], tan[0]) @ root_frame
    frames = transport_frames(pts, tan, first)
    heads = spline(u_st[:-1])
    mats = np.tile(np.eye(4), (len(stations) - 1, 1, 1))
    for j in range(len(stations) - 1):
        mats[j, :3, :3] = frames[j * substeps]
        mats[j, :3, 3] = heads[j]
    return JointPoses(mats, spline(u_st[1:]), spline, np.asarray(stations, float)), table.length


def _control_points(n_ctrl, rig_hooks, anchors, frame):
    pts = [None] * n_ctrl
    pts[0], pts[-1] = anchors
    for hook in rig_hooks:
        try:
            coil = np.asarray(frame[hook.coil], float)
        except KeyError:
            raise KeyError("coil %r missing from frame" % hook.coil) from None
        pts[hook.index] = coil + np.asarray(hook.offset, float)
    return np.array(pts)


def build_rig(tongue, bind_frame, config, mandible=None, maxilla=None):
    """Fit spline, hooks, joint chain and envelope weights to a bind pose.

    ``bind_frame`` maps coil name -> bind position (mm).
    """
    tongue = triangulate(tongue)
    missing = [c for c in config.coils if c not in bind_frame]
    if missing:
        raise KeyError("bind frame lacks coil(s): %s" % ", ".join(missing))
    bind_frame = {c: np.asarray(p, float).copy() for c, p in bind_frame.items()}
    query = MeshQuery(tongue)
    centroid = tongue.vertices.mean(axis=0)
    n_ctrl = len(config.hooks) + 2
    ctrl = np.empty((n_ctrl, 3))
    ctrl[0] = config.root_anchor
    ctrl[-1] = config.tip_anchor
    hooks = []
    for coil, index in sorted(config.hooks.items(), key=lambda kv: kv[1]):
        coil_pos = bind_frame[coil]
        ctrl[index] = coil_pos + _surface_offset(query, centroid, coil_pos, config.depth)
        hooks.append(Hook(coil, index, tuple(ctrl[index] - coil_pos)))
    for end, index in (("root", 0), ("tip", n_ctrl - 1)):
        coil = config.anchor_coils.get(end)
        if coil:
            hooks.append(Hook(coil, index, tuple(ctrl[index] - bind_frame[coil])))
    hooks = tuple(sorted(hooks, key=lambda h: h.index))

    # bind pose = solve on the bind frame, so the identity holds exactly
    spline0 = Spline(_control_points(n_ctrl, hooks, (ctrl[0], ctrl[-1]), bind_frame))
    table = ArcLengthTable(spline0)
    length = table.length
    if not length > 0:
        raise DegenerateError("bind spline has zero length")
    stations = np.linspace(0.0, length, config.joint_count + 1)
    root_frame = initial_frame(spline0.derivative(0.0), config.roll_reference)
    poses, _ = _chain(spline0, stations, root_frame, table)
    envelopes = tuple(Envelope(poses.matrices[j, :3, 3].copy(), poses.tails[j].copy(), config.r_in, config.r_out)
                      for j in range(config.joint_count))
    weights = envelope_weights(envelopes, tongue, config.smoothstep)
    return Rig(tongue, config, bind_frame, spline0, hooks, stations, root_frame, poses, envelopes,
               weights.matrix, weights.unskinned, mandible, maxilla)


# ---------------------------------------------------------------- posing

def solve_spline_ik(rig, frame):
    """Joint poses for one frame of coil positions (mapping coil -> position)."""
    anchors = (np.asarray(rig.config.root_anchor, float), np.asarray(rig.config.tip_anchor, float))
    spline = Spline(_control_points(len(rig.config.hooks) + 2, rig.hooks, anchors, frame))
    table = ArcLengthTable(spline)
    length = table.length
    stations = rig.bind_stations * (length / rig.bind_length)
    stations[-1] = length
    poses, _ = _chain(spline, stations, rig.bind_root_frame, table)
    return poses


def _invert(m):
    r = m[..., :3, :3]
    t = m[..., :3, 3]
    out = np.zeros_like(m)
    out[..., :3, :3] = np.swapaxes(r, -1, -2)
    out[..., :3, 3] = -np.einsum("...ji,...j->...i", r, t)
    out[..., 3, 3] = 1.0
    return out


def skin(rig, poses):
    """Linear blend skinning of the bind tongue; unweighted vertices stay put."""
    rel = poses.matrices @ _invert(rig.bind_poses.matrices)
    v = rig.tongue.vertices
    moved = np.einsum("jab,vb->jva", rel[:, :3, :3], v) + rel[:, None, :3, 3]
    out = np.einsum("vj,jva->va", rig.weights, moved)
    free = np.asarray(rig.unskinned, dtype=np.int64)
    out[free] = v[free]
    return out


def jaw_transform(rig, jaw_position):
    """Rotation about the hinge axis that carries the bind jaw coil toward ``jaw_position``."""
    hinge = rig.config.hinge
    if hinge is None:
        raise ValueError("rig has no jaw hinge configured")
    a = np.asarray(hinge.point, float)
    k = np.asarray(hinge.direction, float)

    def radial(p):
        d = np.asarray(p, float) - a
        d = d - (d @ k) * k
        if np.linalg.norm(d) < 1e-9:
            raise DegenerateError("jaw coil lies on the hinge axis; rotation angle undefined")
        return d

    b = radial(rig.bind_frame[hinge.coil])
    c = radial(jaw_position)
    angle = np.arctan2(k @ np.cross(b, c), b @ c)
    if angle == 0.0:
        return RigidTransform.identity()
    return RigidTransform.about_axis(a, k, angle)


def tracking_vertices(rig, coils):
    """Bind-mesh vertex nearest each coil's bind position (lowest index on ties)."""
    v = rig.tongue.vertices
    out = {}
    for coil in coils:
        d = np.einsum("ij,ij->i", v - rig.bind_frame[coil], v - rig.bind_frame[coil])
        out[coil] = int(np.argmin(d))
    return out
