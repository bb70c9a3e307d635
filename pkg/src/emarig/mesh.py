"""Indexed surface meshes and the geometry processing applied to scanned
vocal-tract surfaces: OBJ/PLY I/O, vertex deduplication, grid decimation,
Catmull-Clark smoothing and shrinkwrap projection.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParseError


@dataclass(frozen=True, eq=False)
class _IndexedMesh:
    vertices: np.ndarray
    faces: np.ndarray

    arity = 0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, self.arity)
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range for %d vertices" % len(v))
            if _degenerate_mask(f).any():
                raise ValueError("degenerate face (repeated vertex index)")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def face_count(self):
        return len(self.faces)

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)):
        rotation = np.asarray(rotation, float)
        return type(self)(self.vertices @ rotation.T + np.asarray(translation, float), self.faces)

    def with_vertices(self, vertices):
        return type(self)(vertices, self.faces)

    def edges(self):
        """Unique undirected edges as ``(E, 2)`` (sorted pairs, first-seen order)."""
        return _edge_table(self.faces)[0]

    def __repr__(self):
        return "%s(%d vertices, %d faces)" % (type(self).__name__, self.vertex_count, self.face_count)


class TriMesh(_IndexedMesh):
    """Triangle mesh; a mesh with zero faces doubles as a point cloud."""

    arity = 3


class QuadMesh(_IndexedMesh):
    arity = 4


def triangulate(mesh):
    """Fan-triangulate quads (0,1,2), (0,2,3)."""
    if isinstance(mesh, TriMesh):
        return mesh
    f = mesh.faces
    return TriMesh(mesh.vertices, np.concatenate([f[:, [0, 1, 2]], f[:, [0, 2, 3]]], axis=1).reshape(-1, 3))


def face_normals(mesh):
    """Unit normals by right-hand winding (first three corners for quads)."""
    v = mesh.vertices[mesh.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(length > 0, length, 1.0)


# ---------------------------------------------------------------- I/O

def _polygons_to_mesh(vertices, polygons, triangulate_all):
    if polygons and not triangulate_all and all(len(p) == 4 for p in polygons):
        return QuadMesh(vertices, polygons)
    tris = [(p[0], p[i], p[i + 1]) for p in polygons for i in range(1, len(p) - 1)]
    return TriMesh(vertices, np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_obj(text, triangulate=False):
    """Read ``v``/``f`` records. All-quad files give a QuadMesh unless
    ``triangulate``; anything else is fan-triangulated into a TriMesh."""
    if not isinstance(text, str):
        text = text.read()
    vertices, polygons, face_lines = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        kind = tokens[0]
        if kind == "v":
            if len(tokens) < 4:
                raise ParseError("vertex record needs 3 coordinates", lineno)
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise ParseError("non-numeric vertex coordinate", lineno) from None
        elif kind == "f":
            if len(tokens) < 4:
                raise ParseError("face record needs at least 3 vertices", lineno)
            poly = []
            for t in tokens[1:]:
                try:
                    idx = int(t.split("/")[0])
                except ValueError:
                    raise ParseError("bad face index %r" % t, lineno) from None
                if idx < 0:
                    idx = len(vertices) + idx + 1
                if idx < 1 or idx > len(vertices):
                    raise ParseError("face index %s out of range (%d vertices)" % (t, len(vertices)), lineno)
                poly.append(idx - 1)
            polygons.append(poly)
            face_lines.append(lineno)
    for poly, lineno in zip(polygons, face_lines):
        if len(set(poly)) != len(poly):
            raise ParseError("degenerate face (repeated vertex)", lineno)
    return _polygons_to_mesh(np.array(vertices, float).reshape(-1, 3), polygons, triangulate)


def save_obj(mesh):
    out = io.StringIO()
    for x, y, z in mesh.vertices:
        out.write("v %.6f %.6f %.6f\n" % (x + 0.0, y + 0.0, z + 0.0))
    for face in mesh.faces:
        out.write("f " + " ".join(str(i + 1) for i in face) + "\n")
    return out.getvalue()


def load_ply(data, triangulate=False):
    """Read ascii PLY with x/y/z vertex properties and an optional face list."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("ascii")
    elif not isinstance(data, str):
        data = data.read()
        if isinstance(data, bytes):
            data = data.decode("ascii")
    lines = data.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    elements = []  # (name, count, [property names], list-property?)
    end = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError("only ascii PLY is supported", lineno)
        elif tokens[0] == "element":
            try:
                elements.append([tokens[1], int(tokens[2]), [], False])
            except (IndexError, ValueError):
                raise ParseError("malformed element record", lineno) from None
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before element", lineno)
            if len(tokens) >= 5 and tokens[1] == "list":
                elements[-1][2].append(tokens[4])
                elements[-1][3] = True
            elif len(tokens) == 3:
                elements[-1][2].append(tokens[2])
            else:
                raise ParseError("malformed property record", lineno)
        elif tokens[0] == "end_header":
            end = lineno
            break
        else:
            raise ParseError("unknown header keyword %r" % tokens[0], lineno)
    if end is None:
        raise ParseError("missing end_header", len(lines))

    body = [(i, ln.split()) for i, ln in enumerate(lines[end:], start=end + 1) if ln.strip()]
    cursor = 0
    vertices = None
    polygons = []
    for name, count, props, is_list in elements:
        rows = body[cursor: cursor + count]
        if len(rows) < count:
            raise ParseError("element %s declares %d rows, found %d" % (name, count, len(rows)),
                             body[-1][0] if body else end)
        cursor += count
        if name == "vertex":
            try:
                cols = [props.index(a) for a in "xyz"]
            except ValueError:
                raise ParseError("vertex element lacks x/y/z properties", end) from None
            vertices = np.empty((count, 3))
            for k, (lineno, tokens) in enumerate(rows):
                if len(tokens) != len(props):
                    raise ParseError("expected %d vertex values, found %d" % (len(props), len(tokens)), lineno)
                try:
                    vertices[k] = [float(tokens[c]) for c in cols]
                except ValueError:
                    raise ParseError("non-numeric vertex value", lineno) from None
        elif name == "face":
            if vertices is None:
                raise ParseError("face element before vertex element", end)
            for lineno, tokens in rows:
                try:
                    n = int(tokens[0])
                    poly = [int(t) for t in tokens[1: 1 + n]]
                except (ValueError, IndexError):
                    raise ParseError("malformed face record", lineno) from None
                if len(poly) != n or n < 3:
                    raise ParseError("malformed face record", lineno)
                if min(poly) < 0 or max(poly) >= len(vertices):
                    raise ParseError("face index out of range (%d vertices)" % len(vertices), lineno)
                if len(set(poly)) != n:
                    raise ParseError("degenerate face (repeated vertex)", lineno)
                polygons.append(poly)
    if vertices is None:
        raise ParseError("no vertex element", end)
    return _polygons_to_mesh(vertices, polygons, triangulate)


def save_ply(mesh):
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write("element vertex %d\n" % mesh.vertex_count)
    out.write("property float x\nproperty float y\nproperty float z\n")
    if mesh.face_count:
        out.write("element face %d\n" % mesh.face_count)
        out.write("property list uchar int vertex_indices\n")
    out.write("end_header\n")
    for x, y, z in mesh.vertices:
        out.write("%.6f %.6f %.6f\n" % (x + 0.0, y + 0.0, z + 0.0))
    for face in mesh.faces:
        out.write("%d %s\n" % (len(face), " ".join(str(i) for i in face)))
    return out.getvalue()


def read_mesh(path, triangulate=False):
    """Load ``.obj`` or ``.ply`` by extension."""
    path = str(path)
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    if path.lower().endswith(".obj"):
        return load_obj(text, triangulate)
    if path.lower().endswith(".ply"):
        return load_ply(text, triangulate)
    raise ValueError("unsupported mesh format: %s" % path)


def mesh_text(mesh, path):
    path = str(path).lower()
    if path.endswith(".obj"):
        return save_obj(mesh)
    if path.endswith(".ply"):
        return save_ply(mesh)
    raise ValueError("unsupported mesh format: %s" % path)


# ---------------------------------------------------------------- reduction

def _first_seen_labels(keys):
    """Cluster label per row of ``keys``; labels numbered by first occurrence."""
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse], len(first)


def _clean_faces(faces, drop_duplicates):
    if not len(faces):
        return faces
    f = faces[~_degenerate_mask(faces)]
    if drop_duplicates and len(f):
        _, keep = np.unique(np.sort(f, axis=1), axis=0, return_index=True)
        f = f[np.sort(keep)]
    return f


def _degenerate_mask(f):
    k = f.shape[1]
    mask = np.zeros(len(f), dtype=bool)
    for i in range(k):
        for j in range(i + 1, k):
            mask |= f[:, i] == f[:, j]
    return mask


def deduplicate_vertices(mesh, eps=0.0):
    """Merge vertices that snap to the same ``eps`` grid point.

    The first vertex of each group keeps its coordinates; faces that collapse
    are removed. ``eps == 0`` merges only exact duplicates.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if mesh.vertex_count == 0:
        return mesh
    keys = np.floor(mesh.vertices / eps + 0.5).astype(np.int64) if eps > 0 else mesh.vertices
    labels, n = _first_seen_labels(keys)
    first = np.full(n, -1, dtype=np.int64)
    for i in range(len(labels) - 1, -1, -1):
        first[labels[i]] = i
    faces = _clean_faces(labels[mesh.faces], drop_duplicates=False)
    return type(mesh)(mesh.vertices[first], faces)


def decimate_cluster(mesh, cell):
    """Uniform-grid vertex clustering anchored at the bounding-box minimum.

    Vertices sharing a cell collapse to their centroid; degenerate and
    duplicate faces are dropped.
    """
    if not cell > 0:
        raise ValueError("cell size must be positive")
    if mesh.vertex_count == 0:
        return mesh
    v = mesh.vertices
    keys = np.floor((v - v.min(axis=0)) / cell).astype(np.int64)
    labels, n = _first_seen_labels(keys)
    counts = np.bincount(labels, minlength=n).astype(float)
    centroids = np.stack([np.bincount(labels, weights=v[:, k], minlength=n) for k in range(3)], axis=1)
    centroids /= counts[:, None]
    single = counts == 1
    # singletons keep their exact coordinates
    centroids[labels[single[labels]]] = v[single[labels]]
    faces = _clean_faces(labels[mesh.faces], drop_duplicates=True)
    return type(mesh)(centroids, faces)


# ---------------------------------------------------------------- subdivision

def _edge_table(faces):
    """Unique sorted edges in first-seen order, plus per-face-corner edge ids."""
    k = faces.shape[1]
    a = faces
    b = np.roll(faces, -1, axis=1)
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=-1).reshape(-1, 2)
    if not len(pairs):
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, k), dtype=np.int64)
    labels, n = _first_seen_labels(pairs)
    edges = np.empty((n, 2), dtype=np.int64)
    edges[labels] = pairs
    return edges, labels.reshape(-1, k)


def catmull_clark(mesh, levels=1):
    """Catmull-Clark subdivision; boundaries follow the cubic B-spline curve rule.

    Output layout per level: original vertices, then edge points, then face
    points, so V' = V + E + F and F' = 4F (for quads).
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    out = mesh if isinstance(mesh, QuadMesh) else QuadMesh(mesh.vertices, mesh.faces)
    for _ in range(levels):
        out = _subdivide_once(out)
    return out


def _subdivide_once(mesh):
    v, f = mesh.vertices, mesh.faces
    nv, nf, k = len(v), len(f), f.shape[1]
    edges, corner_edge = _edge_table(f)
    ne = len(edges)
    edge_faces = np.bincount(corner_edge.reshape(-1), minlength=ne)
    if np.any(edge_faces > 2):
        e = edges[np.argmax(edge_faces > 2)]
        raise ValueError("non-manifold edge (%d, %d) shared by more than two faces" % tuple(e))
    boundary = edge_faces == 1

    face_pts = v[f].mean(axis=1)
    mid = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])
    face_sum = np.zeros((ne, 3))
    np.add.at(face_sum, corner_edge.reshape(-1), np.repeat(face_pts, k, axis=0))
    edge_pts = np.where(boundary[:, None], mid, 0.5 * mid + 0.25 * face_sum)

    # interior vertex rule
    valence = np.bincount(edges.reshape(-1), minlength=nv).astype(float)
    face_count = np.bincount(f.reshape(-1), minlength=nv).astype(float)
    fsum = np.zeros((nv, 3))
    np.add.at(fsum, f.reshape(-1), np.repeat(face_pts, k, axis=0))
    rsum = np.zeros((nv, 3))
    np.add.at(rsum, edges[:, 0], mid)
    np.add.at(rsum, edges[:, 1], mid)
    with np.errstate(invalid="ignore", divide="ignore"):
        favg = fsum / face_count[:, None]
        ravg = rsum / valence[:, None]
        new_v = (favg + 2 * ravg + (valence[:, None] - 3) * v) / valence[:, None]

    # boundary vertex rule
    bedges = edges[boundary]
    bcount = np.bincount(bedges.reshape(-1), minlength=nv)
    nbr = np.zeros((nv, 3))
    np.add.at(nbr, bedges[:, 0], v[bedges[:, 1]])
    np.add.at(nbr, bedges[:, 1], v[bedges[:, 0]])
    on_boundary = bcount > 0
    regular = bcount == 2
    new_v[regular] = 0.75 * v[regular] + 0.125 * nbr[regular]
    corner = on_boundary & ~regular
    new_v[corner] = v[corner]
    isolated = valence == 0
    new_v[isolated] = v[isolated]

    e_base, f_base = nv, nv + ne
    prev_edge = np.roll(corner_edge, 1, axis=1)
    quads = np.stack(
        [f, e_base + corner_edge, np.broadcast_to(f_base + np.arange(nf)[:, None], f.shape), e_base + prev_edge],
        axis=-1,
    ).reshape(-1, 4)
    return QuadMesh(np.concatenate([new_v, edge_pts, face_pts]), quads)


# ---------------------------------------------------------------- closest point

def closest_point_on_triangles(p, a, b, c):
    """Closest point to ``p`` on triangles ``(a, b, c)``; all arguments broadcast."""
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, float) for x in (p, a, b, c)))
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c

    def dot(x, y):
        return np.einsum("...i,...i->...", x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(invalid="ignore", divide="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_w = vb / denom
        w_w = vc / denom
    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [
        a,
        b,
        a + t_ab[..., None] * ab,
        c,
        a + t_ac[..., None] * ac,
        b + t_bc[..., None] * (c - b),
    ]
    face = a + v_w[..., None] * ab + w_w[..., None] * ac
    return np.select([cnd[..., None] for cnd in conds], choices, default=face)


class MeshQuery:
    """Exact nearest-surface queries against a fixed triangle mesh.

    Candidate triangles are pruned with a k-d tree over triangle centroids
    and per-triangle bounding radii; the exact answer is kept.
    """

    def __init__(self, mesh):
        mesh = triangulate(mesh)
        if mesh.face_count == 0:
            raise ValueError("closest-point queries need a mesh with at least one face")
        self.mesh = mesh
        self.tris = mesh.vertices[mesh.faces]
        self.centroids = self.tris.mean(axis=1)
        self.radii = np.linalg.norm(self.tris - self.centroids[:, None], axis=-1).max(axis=1)
        self.tree = cKDTree(self.centroids)

    def closest(self, points):
        """Return ``(closest points, face indices, distances)`` for ``(n, 3)`` queries."""
        pts = np.atleast_2d(np.asarray(points, float))
        tris = self.tris
        _, seed = self.tree.query(pts)
        seed_pt = closest_point_on_triangles(pts, tris[seed, 0], tris[seed, 1], tris[seed, 2])
        bound = np.linalg.norm(pts - seed_pt, axis=1)
        cands = self.tree.query_ball_point(pts, bound + self.radii.max() + 1e-12)
        q_idx = np.repeat(np.arange(len(pts)), [len(c) for c in cands])
        f_idx = np.fromiter((i for c in cands for i in c), dtype=np.int64, count=len(q_idx))
        keep = np.linalg.norm(pts[q_idx] - self.centroids[f_idx], axis=1) - self.radii[f_idx] <= bound[q_idx] + 1e-12
        q_idx, f_idx = q_idx[keep], f_idx[keep]
        cp = closest_point_on_triangles(pts[q_idx], tris[f_idx, 0], tris[f_idx, 1], tris[f_idx, 2])
        d2 = np.einsum("ij,ij->i", pts[q_idx] - cp, pts[q_idx] - cp)
        order = np.lexsort((f_idx, d2, q_idx))
        q_sorted = q_idx[order]
        first = order[np.r_[True, q_sorted[1:] != q_sorted[:-1]]]
        best_pt = cp[first]
        best_face = f_idx[first]
        return best_pt, best_face, np.sqrt(d2[first])


def closest_point_on_mesh(mesh, point):
    """Globally nearest surface point: ``(point, face index, distance)``."""
    pt, face, dist = MeshQuery(mesh).closest(np.asarray(point, float)[None])
    return pt[0], int(face[0]), float(dist[0])


def shrinkwrap(cage, target):
    """Project every cage vertex onto its nearest point of ``target``."""
    if target.face_count == 0:
        raise ValueError("shrinkwrap target is empty")
    pts, _, _ = MeshQuery(target).closest(cage.vertices)
    return cage.with_vertices(pts)


# ---------------------------------------------------------------- primitives

def box(size=1.0, origin=(0.0, 0.0, 0.0)):
    """Axis-aligned cube as an outward-wound QuadMesh with corner at ``origin``."""
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    faces = [
        (0, 1, 3, 2),  # x = 0
        (4, 6, 7, 5),  # x = 1
        (0, 4, 5, 1),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 2, 6, 4),  # z = 0
        (1, 5, 7, 3),  # z = 1
    ]
    return QuadMesh(corners * size + np.asarray(origin, float), faces)


def icosphere(radius=1.0, subdivisions=2, center=(0.0, 0.0, 0.0)):
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts) * radius + np.asarray(center, float), faces)
