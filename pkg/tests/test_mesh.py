import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import closest_on_mesh_bruteforce

from emarig.errors import ParseError
from emarig.mesh import (
    MeshQuery,
    QuadMesh,
    TriMesh,
    box,
    catmull_clark,
    closest_point_on_mesh,
    decimate_cluster,
    deduplicate_vertices,
    icosphere,
    load_obj,
    load_ply,
    save_obj,
    save_ply,
    shrinkwrap,
    triangulate,
)

CUBE_OBJ = """# unit cube
v 0 0 0
v 0 0 1
v 0 1 0
v 0 1 1
v 1 0 0
v 1 0 1
v 1 1 0
v 1 1 1
f 1 2 4 3
f 5 7 8 6
f 1 5 6 2
f 3 4 8 7
f 1 3 7 5
f 2 6 8 4
"""


def exploded_cube():
    tri = triangulate(box())
    v = tri.vertices[tri.faces.reshape(-1)]
    return TriMesh(v, np.arange(36).reshape(12, 3))


def test_obj_cube_quad_and_triangulated():
    q = load_obj(CUBE_OBJ)
    assert isinstance(q, QuadMesh) and (q.vertex_count, q.face_count) == (8, 6)
    t = load_obj(CUBE_OBJ, triangulate=True)
    assert isinstance(t, TriMesh) and t.face_count == 12


def test_obj_bad_index_reports_line():
    text = CUBE_OBJ.replace("f 2 6 8 4", "f 2 6 9 4")
    with pytest.raises(ParseError) as err:
        load_obj(text)
    assert err.value.line == 15
    with pytest.raises(ParseError):
        load_obj("v 1 2\n")


def test_obj_mixed_polygons_fan():
    m = load_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 0 0\nf 1 2 3 4\nf 2 5 3\n")
    assert isinstance(m, TriMesh) and m.face_count == 3


@pytest.mark.parametrize("mesh", [icosphere(3.7, 1), box(2.5, (1, -1, 0.25))])
def test_io_round_trip_six_decimals(mesh):
    for save, load in ((save_obj, load_obj), (save_ply, load_ply)):
        back = load(save(mesh))
        assert type(back) is type(mesh)
        np.testing.assert_allclose(back.vertices, mesh.vertices, atol=5e-7)
        np.testing.assert_array_equal(back.faces, mesh.faces)


def test_ply_point_cloud_and_bytes():
    pc = TriMesh(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((0, 3)))
    text = save_ply(pc)
    assert "element face" not in text
    back = load_ply(text.encode("ascii"))
    assert back.vertex_count == 5 and back.face_count == 0
    with pytest.raises(ParseError):
        load_ply(b"ply\nformat binary_little_endian 1.0\nend_header\n")


def test_mesh_invariants():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [(0, 1, 3)])
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [(0, 1, 1)])
    m = icosphere()
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_dedup_exploded_cube():
    m = exploded_cube()
    out = deduplicate_vertices(m, 1e-6)
    assert (out.vertex_count, out.face_count) == (8, 12)
    assert out.vertex_count <= m.vertex_count


def test_dedup_identity_and_merge():
    m = icosphere(1.0, 1)
    out = deduplicate_vertices(m, 0.0)
    np.testing.assert_array_equal(out.vertices, m.vertices)
    np.testing.assert_array_equal(out.faces, m.faces)
    # two vertices 0.5 apart in one grid cell merge at eps 1; the face using both collapses
    v = np.array([[-0.25, 0, 0], [0.25, 0, 0], [0, 3, 0], [3, 0, 0]], float)
    out = deduplicate_vertices(TriMesh(v, [(0, 1, 2), (0, 2, 3)]), 1.0)
    assert out.vertex_count == 3
    assert out.face_count == 1


def test_decimate_limits():
    cube = triangulate(box())
    assert decimate_cluster(cube, 0.6).vertex_count == 8
    same = decimate_cluster(cube, 0.01)
    np.testing.assert_array_equal(same.faces, cube.faces)
    big = decimate_cluster(cube, 10.0)
    assert big.vertex_count == 1 and big.face_count == 0
    with pytest.raises(ValueError):
        decimate_cluster(cube, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(2, 5))
def test_decimate_nested_cells_never_add_vertices(cell, factor):
    m = icosphere(5.0, 2)
    fine = decimate_cluster(m, cell)
    coarse = decimate_cluster(m, cell * factor)
    assert coarse.vertex_count <= fine.vertex_count <= m.vertex_count
    assert coarse.face_count <= fine.face_count <= m.face_count


def euler_char(m):
    return m.vertex_count - len(m.edges()) + m.face_count


def test_catmull_clark_counts_and_recurrence():
    m = box()
    v, e, f = 8, 12, 6
    for level in (1, 2, 3):
        m = catmull_clark(m, 1)
        v, e, f = v + e + f, 2 * e + 4 * f, 4 * f
        assert (m.vertex_count, len(m.edges()), m.face_count) == (v, e, f)
        assert euler_char(m) == 2
        assert m.faces.shape[1] == 4
    assert (catmull_clark(box(), 1).vertex_count, catmull_clark(box(), 1).face_count) == (26, 24)
    assert (catmull_clark(box(), 2).vertex_count, catmull_clark(box(), 2).face_count) == (98, 96)


def test_catmull_clark_stencils_by_hand():
    # original cube corner: n = 3, F = avg of 3 face centres, R = avg of 3 edge midpoints
    out = catmull_clark(box(), 1)
    f_avg = np.mean([[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]], axis=0)
    r_avg = np.mean([[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]], axis=0)
    np.testing.assert_allclose(out.vertices[0], (f_avg + 2 * r_avg) / 3, atol=1e-12)
    np.testing.assert_allclose(out.vertices.mean(axis=0), [0.5, 0.5, 0.5], atol=1e-9)


def test_catmull_clark_identity_boundary_and_errors():
    m = box()
    same = catmull_clark(m, 0)
    np.testing.assert_array_equal(same.vertices, m.vertices)
    # single open quad: every corner sits on two boundary edges, 1/8 3/4 1/8 stencil
    quad = QuadMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [(0, 1, 2, 3)])
    out = catmull_clark(quad, 1)
    np.testing.assert_allclose(out.vertices[0], [0.125, 0.125, 0.0], atol=1e-12)
    np.testing.assert_allclose(out.vertices[4:8].mean(axis=0), [0.5, 0.5, 0.0], atol=1e-12)
    assert out.face_count == 4
    # strip of two quads: the shared boundary vertex uses the 1/8 3/4 1/8 rule
    strip = QuadMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0], [1, 1, 0], [2, 1, 0]],
                     [(0, 1, 4, 3), (1, 2, 5, 4)])
    out = catmull_clark(strip, 1)
    np.testing.assert_allclose(out.vertices[1], [1, 0, 0], atol=1e-12)
    bent = strip.with_vertices(strip.vertices + np.array([[0, 0, 0], [0, 0, 1], [0, 0, 0], [0] * 3, [0] * 3, [0] * 3]))
    out = catmull_clark(bent, 1)
    np.testing.assert_allclose(out.vertices[1], [1, 0, 0.75], atol=1e-12)
    fan = QuadMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [1, 0, 1], [1, 0, -1]],
                   [(0, 1, 2, 3), (0, 1, 6, 4), (0, 1, 7, 5)])
    with pytest.raises(ValueError, match="non-manifold"):
        catmull_clark(fan, 1)


def random_mesh(rng, kind):
    if kind == "sphere":
        m = icosphere(2.0, 1)
        return TriMesh(m.vertices + rng.normal(0, 0.15, m.vertices.shape), m.faces)
    n = 200
    v = rng.uniform(-3, 3, (3 * n, 3))
    return TriMesh(v, np.arange(3 * n).reshape(n, 3))


@pytest.mark.parametrize("kind", ["sphere", "soup"])
def test_closest_point_matches_bruteforce(kind):
    rng = np.random.default_rng(7)
    mesh = random_mesh(rng, kind)
    q = rng.uniform(-4, 4, (150, 3))
    pts, faces, dists = MeshQuery(mesh).closest(q)
    for i, p in enumerate(q):
        ref_pt, _, ref_d = closest_on_mesh_bruteforce(mesh.vertices, mesh.faces, p)
        assert abs(dists[i] - ref_d) <= 1e-9
        np.testing.assert_allclose(pts[i], ref_pt, atol=1e-9)


def test_closest_point_examples():
    mesh = icosphere(1.0, 1)
    p, f, d = closest_point_on_mesh(mesh, mesh.vertices[5])
    np.testing.assert_allclose(p, mesh.vertices[5], atol=1e-12)
    assert d == 0.0
    a, b, c = mesh.vertices[mesh.faces[3]]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n)
    centroid = (a + b + c) / 3
    p, f, d = closest_point_on_mesh(mesh, centroid + 0.05 * n)
    np.testing.assert_allclose(p, centroid, atol=1e-12)
    assert f == 3 and d == pytest.approx(0.05, abs=1e-12)
    # beyond the shared edge of two flat triangles
    two = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [(0, 1, 2), (1, 3, 2)])
    p, f, d = closest_point_on_mesh(two, [2.0, -1.0, 0.5])
    np.testing.assert_allclose(p, [1.0, 0.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        closest_point_on_mesh(TriMesh(np.zeros((1, 3)), np.zeros((0, 3))), [0, 0, 0])


def test_shrinkwrap_cube_onto_sphere_and_idempotent():
    sphere = icosphere(1.0, 3, center=(0.5, 0.5, 0.5))
    cage = catmull_clark(box(4.0, (-1.5, -1.5, -1.5)), 1)
    out = shrinkwrap(cage, sphere)
    assert out.face_count == cage.face_count
    np.testing.assert_array_equal(out.faces, cage.faces)
    r = np.linalg.norm(out.vertices - 0.5, axis=1)
    # faceting error of a level-3 icosphere
    assert np.all(r <= 1.0 + 1e-9) and np.all(r >= 0.98)
    for i, v in enumerate(cage.vertices[:10]):
        ref, _, _ = closest_on_mesh_bruteforce(sphere.vertices, sphere.faces, v)
        np.testing.assert_allclose(out.vertices[i], ref, atol=1e-9)
    again = shrinkwrap(out, sphere)
    np.testing.assert_allclose(again.vertices, out.vertices, atol=1e-9)
    with pytest.raises(ValueError):
        shrinkwrap(cage, TriMesh(np.zeros((1, 3)), np.zeros((0, 3))))


def test_shrinkwrap_point_over_triangle():
    tri = TriMesh([[0, 0, 0], [4, 0, 0], [0, 4, 0]], [(0, 1, 2)])
    cage = TriMesh([[1, 1, 3]], np.zeros((0, 3)))
    np.testing.assert_allclose(shrinkwrap(cage, tri).vertices[0], [1, 1, 0])
