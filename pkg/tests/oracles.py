"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np


def closest_on_segments(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    return a + t[:, None] * ab


def closest_on_mesh_bruteforce(vertices, faces, p):
    """Nearest point over every triangle of the mesh: ``(point, face, dist)``.

    Per triangle: project onto the supporting plane; if the foot is inside
    (all three edge orientation tests agree with the normal) use it,
    otherwise take the nearest of the three clamped edge points.
    """
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    p = np.broadcast_to(np.asarray(p, float), a.shape)
    n = np.cross(b - a, c - a)
    foot = p - (np.einsum("ij,ij->i", p - a, n) / np.einsum("ij,ij->i", n, n))[:, None] * n
    inside = np.ones(len(a), bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("ij,ij->i", np.cross(v - u, foot - u), n) >= 0
    cands = np.stack([foot, closest_on_segments(p, a, b), closest_on_segments(p, b, c),
                      closest_on_segments(p, c, a)], axis=1)
    d = np.linalg.norm(cands - p[:, None], axis=-1)
    d[~inside, 0] = np.inf
    k = np.argmin(d, axis=1)
    rows = np.arange(len(a))
    per_face = d[rows, k]
    best = int(np.argmin(per_face))
    return cands[best, k[best]], best, float(per_face[best])


def hull_facets_bruteforce(points, tol=1e-9):
    """Every triple whose plane keeps all points on one side (O(n^4) work).

    Returns the set of sorted index triples. Assumes no four points are
    coplanar, which holds with probability one for random clouds.
    """
    pts = np.asarray(points, float)
    triples = np.array(list(itertools.combinations(range(len(pts)), 3)))
    i, j, k = triples.T
    n = np.cross(pts[j] - pts[i], pts[k] - pts[i])
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-12
    triples, i, n, norm = triples[ok], i[ok], n[ok], norm[ok]
    side = np.einsum("tk,pk->tp", n / norm[:, None], pts) - np.einsum("tk,tk->t", n / norm[:, None], pts[i])[:, None]
    one_side = np.all(side <= tol, axis=1) | np.all(side >= -tol, axis=1)
    return {tuple(t) for t in triples[one_side]}


def kabsch_check_angle(r1, r2):
    """Geodesic angle between two rotations, radians."""
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
