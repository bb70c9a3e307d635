"""Palate contour reconstruction and rigid cross-modal registration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateError, ParseError
from .mesh import MeshQuery, TriMesh, triangulate

log = logging.getLogger(__name__)

TANGENCY_NUDGE = 1e-9  # mm


@dataclass(frozen=True, eq=False)
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        length = np.linalg.norm(n)
        if not length > 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "point", np.asarray(self.point, float).copy())
        object.__setattr__(self, "normal", n / length)

    @classmethod
    def axis(cls, axis, offset=0.0):
        """Plane ``<axis> = offset`` for axis in ``"xyz"``."""
        k = "xyz".index(axis)
        n = np.zeros(3)
        n[k] = 1.0
        return cls(n * offset, n)

    def signed_distance(self, points):
        return (np.asarray(points, float) - self.point) @ self.normal

    def transformed(self, transform):
        return Plane(transform.apply(self.point), transform.rotation @ self.normal)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t``; R is a proper rotation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, float).reshape(3, 3)
        t = np.array(self.translation, float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(r) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def about_axis(cls, point, direction, angle):
        """Rotation by ``angle`` (rad) about the line through ``point``."""
        r = axis_angle_matrix(direction, angle)
        point = np.asarray(point, float)
        return cls(r, point - r @ point)

    def apply(self, points):
        return np.asarray(points, float) @ self.rotation.T + self.translation

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotation_angle(self):
        """Rotation magnitude in radians."""
        c = (np.trace(self.rotation) - 1) / 2
        s = np.linalg.norm([self.rotation[2, 1] - self.rotation[1, 2],
                            self.rotation[0, 2] - self.rotation[2, 0],
                            self.rotation[1, 0] - self.rotation[0, 1]]) / 2
        return float(np.arctan2(s, c))

    def to_text(self):
        """Twelve numbers: rotation row-major, then translation."""
        values = np.concatenate([self.rotation.reshape(-1), self.translation])
        values = np.where(np.abs(values) < 1e-15, 0.0, values)
        return " ".join("%.12g" % v for v in values) + "\n"

    @classmethod
    def from_text(cls, text):
        try:
            values = [float(t) for t in text.split()]
        except ValueError as exc:
            raise ParseError("transform file: %s" % exc) from None
        if len(values) != 12:
            raise ParseError("transform file needs 12 numbers, found %d" % len(values))
        r = np.array(values[:9]).reshape(3, 3)
        # text precision is 12 digits; re-project onto SO(3)
        u, _, vt = np.linalg.svd(r)
        r = u @ np.diag([1, 1, np.linalg.det(u @ vt)]) @ vt
        return cls(r, values[9:])


def axis_angle_matrix(direction, angle):
    k = np.asarray(direction, float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        p = np.array(self.points, float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def as_mesh(self):
        return TriMesh(self.points, np.zeros((0, 3), dtype=np.int64))


def _points(obj):
    if isinstance(obj, PointCloud):
        return obj.points
    if hasattr(obj, "vertices"):
        return obj.vertices
    return np.asarray(obj, float).reshape(-1, 3)


# ---------------------------------------------------------------- hull & sections

def convex_hull_indices(points):
    """Outward-wound hull triangles as indices into ``points``."""
    pts = _points(points)
    if len(pts) < 4:
        raise DegenerateError("convex hull needs at least 4 points, got %d" % len(pts))
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateError("points are coplanar or collinear; hull is degenerate")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateError("degenerate convex hull: %s" % str(exc).splitlines()[0]) from None
    tris = hull.simplices.copy()
    normals = np.cross(pts[tris[:, 1]] - pts[tris[:, 0]], pts[tris[:, 2]] - pts[tris[:, 0]])
    flip = np.einsum("ij,ij->i", normals, hull.equations[:, :3]) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def convex_hull_3d(points):
    """Triangulated hull boundary whose vertices are the hull's input points."""
    pts = _points(points)
    tris = convex_hull_indices(pts)
    used, remap = np.unique(tris, return_inverse=True)
    return TriMesh(pts[used], remap.reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray
    closed: bool

    def length(self):
        p = self.points
        if self.closed and len(p) > 1:
            p = np.vstack([p, p[:1]])
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def plane_mesh_intersection(mesh, plane, min_length=1e-6):
    """Chain triangle/plane crossings into polylines.

    Vertices exactly on the plane are avoided by nudging the plane along its
    normal; sections shorter than ``min_length`` count as point contacts and
    are dropped.
    """
    mesh = triangulate(mesh)
    if mesh.face_count == 0:
        raise ValueError("mesh has no faces")
    v, f = mesh.vertices, mesh.faces
    d = plane.signed_distance(v)
    if np.any(d == 0):
        d = d - TANGENCY_NUDGE
    side = d > 0
    crossing = side[f].any(axis=1) & ~side[f].all(axis=1)
    if not crossing.any():
        return []

    # node = crossed edge; each crossing triangle links exactly two nodes
    node_id = {}
    node_pts = []
    links = []
    for tri in f[crossing]:
        ends = []
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if side[a] == side[b]:
                continue
            key = (min(a, b), max(a, b))
            if key not in node_id:
                i, j = key
                t = d[i] / (d[i] - d[j])
                p = v[i] + t * (v[j] - v[i])
                node_id[key] = len(node_pts)
                node_pts.append(p - plane.signed_distance(p) * plane.normal)
            ends.append(node_id[key])
        links.append(ends)

    adjacency = [[] for _ in node_pts]
    for a, b in links:
        adjacency[a].append(b)
        adjacency[b].append(a)
    seen = np.zeros(len(node_pts), dtype=bool)
    polylines = []

    def walk(start):
        path = [start]
        seen[start] = True
        prev, cur = None, start
        while True:
            nxt = [n for n in adjacency[cur] if n != prev and not seen[n]]
            if not nxt:
                return path
            prev, cur = cur, nxt[0]
            seen[cur] = True
            path.append(cur)

    for start in [i for i, nb in enumerate(adjacency) if len(nb) == 1]:
        if not seen[start]:
            polylines.append(Polyline(np.array([node_pts[i] for i in walk(start)]), closed=False))
    for start in range(len(node_pts)):
        if not seen[start]:
            polylines.append(Polyline(np.array([node_pts[i] for i in walk(start)]), closed=True))
    return [p for p in polylines if p.length() >= min_length]


def midsagittal_plane(trajectories, nose, left_ear, right_ear):
    """Plane through the (time-averaged) nose-bridge coil, normal along the ear axis."""
    nose_p = trajectories.position(nose).mean(axis=0)
    axis = trajectories.position(right_ear).mean(axis=0) - trajectories.position(left_ear).mean(axis=0)
    if np.linalg.norm(axis) == 0:
        raise DegenerateError("ear reference coils coincide")
    return Plane(nose_p, axis)


def palate_contour(trajectories, coils, plane, subsample=1, up=(0.0, 1.0, 0.0)):
    """Upper branch of the midsagittal section through the hull of tongue-coil positions.

    The section loop is split at its extreme points along the in-plane
    horizontal direction; the branch with the larger mean height is returned,
    ordered from the low-abscissa end to the high one.
    """
    coils = list(coils)
    if not coils:
        raise ValueError("palate contour needs at least one tongue coil")
    if subsample < 1:
        raise ValueError("subsample must be >= 1")
    frames = trajectories.positions[::subsample]
    if len(frames) * len(coils) < 4:
        raise DegenerateError("need at least 4 coil samples for a hull")
    idx = [trajectories.index(c) for c in coils]
    pooled = frames[:, idx].reshape(-1, 3)
    hull = convex_hull_3d(pooled)
    sections = plane_mesh_intersection(hull, plane)
    if not sections:
        raise DegenerateError("midsagittal plane does not cut the tongue-coil hull")
    loop = max(sections, key=lambda s: s.length())

    up_p = np.asarray(up, float)
    up_p = up_p - (up_p @ plane.normal) * plane.normal
    if np.linalg.norm(up_p) < 1e-12:
        raise ValueError("vertical axis is perpendicular to the contour plane")
    up_p /= np.linalg.norm(up_p)
    across = np.cross(plane.normal, up_p)
    pts = loop.points
    absc = pts @ across
    height = pts @ up_p
    scale = max(np.ptp(absc), 1.0)
    tol = 1e-9 * scale
    lo_set = np.flatnonzero(absc <= absc.min() + tol)
    hi_set = np.flatnonzero(absc >= absc.max() - tol)
    lo = lo_set[np.argmax(height[lo_set])]
    hi = hi_set[np.argmax(height[hi_set])]
    if lo == hi:
        raise DegenerateError("palate section has no horizontal extent")
    n = len(pts)
    if loop.closed:
        forward = [(lo + k) % n for k in range((hi - lo) % n + 1)]
        backward = [(lo - k) % n for k in range((lo - hi) % n + 1)]
        branch = max((forward, backward), key=lambda b: height[b].mean())
    else:
        a, b = sorted((lo, hi))
        branch = list(range(a, b + 1))
        if branch[0] != lo:
            branch.reverse()
    return PointCloud(pts[branch], label="palate")


# ---------------------------------------------------------------- rigid fitting

def umeyama_rigid(src, dst):
    """Least-squares rotation and translation (no scale) mapping src[i] to dst[i]."""
    a, b = _points(src), _points(dst)
    if len(a) != len(b):
        raise ValueError("point count mismatch: %d vs %d" % (len(a), len(b)))
    if len(a) < 3:
        raise DegenerateError("rigid fit needs at least 3 correspondences")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    da, db = a - ca, b - cb
    sv = np.linalg.svd(da, compute_uv=False)
    if sv[1] <= 1e-10 * max(sv[0], 1e-300):
        raise DegenerateError("source points are collinear; rotation is undetermined")
    u, _, vt = np.linalg.svd(db.T @ da)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    r = u @ s @ vt
    return RigidTransform(r, cb - r @ ca)


def rms_error(transform, src, dst):
    diff = transform.apply(_points(src)) - _points(dst)
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


class IcpResult(NamedTuple):
    transform: RigidTransform
    rms: float
    history: tuple


def icp_point_to_mesh(src, target, init=None, max_iterations=2000, tolerance=1e-10, query=None):
    """Point-to-surface ICP: closest-point correspondences, rigid refit, repeat.

    Stops when the RMS improves by less than ``tolerance`` or after
    ``max_iterations`` refits. ``history`` holds the RMS after each step
    (first entry: ``init``).
    """
    pts = _points(src)
    if len(pts) < 3:
        raise DegenerateError("ICP needs at least 3 source points")
    query = query or MeshQuery(target)
    transform = init or RigidTransform.identity()

    def residual(t):
        moved = t.apply(pts)
        nearest, _, dist = query.closest(moved)
        return moved, nearest, float(np.sqrt(np.mean(dist ** 2)))

    moved, nearest, rms = residual(transform)
    history = [rms]
    for _ in range(max_iterations):
        step = umeyama_rigid(moved, nearest)
        candidate = step.compose(transform)
        c_moved, c_nearest, c_rms = residual(candidate)
        if c_rms > rms:
            # only roundoff can get here
            break
        transform, moved, nearest = candidate, c_moved, c_nearest
        improvement = rms - c_rms
        rms = c_rms
        history.append(rms)
        if improvement < tolerance:
            break
    log.debug("ICP finished after %d step(s), rms %.3g mm", len(history) - 1, rms)
    return IcpResult(transform, rms, tuple(history))
