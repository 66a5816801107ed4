import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshfield.bvh import build_bvh, closest_point, raycast, signed_distance, winding_number
from meshfield.mesh import MeshError, TriangleMesh, denormalize, normalize_to_cube, sample_surface
from meshfield.meshio import load_mesh, save_mesh
from meshfield.shapes import box, cylinder, icosphere, icosphere_chord_error

from oracles import brute_closest_distance, brute_raycast, central_gradient, random_triangles


def soup(tris):
    tris = np.asarray(tris)
    return TriangleMesh(tris.reshape(-1, 3), np.arange(3 * len(tris)).reshape(-1, 3))


# ---------------------------------------------------------------- mesh

def test_mesh_rejects_bad_indices_and_normals():
    with pytest.raises(MeshError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(MeshError):
        TriangleMesh(np.eye(3), [[0, 1, 2]], normals=np.full((3, 3), 1.0))


def test_degenerate_faces_dropped_on_load(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], float)
    m = TriangleMesh(v, [[0, 1, 2], [0, 1, 3]])  # second face has zero area
    save_mesh(tmp_path / "m.ply", m)
    assert load_mesh(tmp_path / "m.ply").n_faces == 1


def test_normalize_cube_of_side_four():
    m = box((8, -2, -2), (12, 2, 2))
    out, scale, offset = normalize_to_cube(m)
    assert scale == pytest.approx(0.45)
    np.testing.assert_allclose(offset, [-10, 0, 0])
    assert np.abs(out.vertices).max() == pytest.approx(0.9)


def test_normalize_round_trip_and_near_identity():
    m = icosphere(2, 0.93)
    out, scale, offset = normalize_to_cube(m)
    assert 0.9 <= scale <= 1.0
    np.testing.assert_allclose(denormalize(out, scale, offset).vertices, m.vertices, atol=1e-9)


# ---------------------------------------------------------------- bvh structure

def test_empty_mesh_rejected():
    with pytest.raises(MeshError, match="empty geometry"):
        build_bvh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)))


def test_single_triangle_one_leaf():
    b = build_bvh(soup([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]]))
    assert b.n_nodes == 1 and len(b.leaves()) == 1


def test_cube_hierarchy_covers_all_faces():
    m = box()
    b = build_bvh(m)
    assert sorted(b.perm.tolist()) == list(range(12))
    np.testing.assert_allclose(b.lo[0], [-0.5] * 3)
    np.testing.assert_allclose(b.hi[0], [0.5] * 3)


def test_parent_boxes_contain_children():
    b = build_bvh(soup(random_triangles(500, seed=3)))
    for i in range(b.n_nodes):
        for c in (b.left[i], b.right[i]):
            if c >= 0:
                assert np.all(b.lo[i] <= b.lo[c]) and np.all(b.hi[i] >= b.hi[c])
    leaves = b.leaves()
    refs = np.concatenate([b.perm[b.start[k]:b.start[k] + b.count[k]] for k in leaves])
    assert sorted(refs.tolist()) == list(range(500))


# ---------------------------------------------------------------- closest point

def test_closest_point_matches_brute_force():
    tris = random_triangles(1000, seed=1)
    b = build_bvh(soup(tris))
    q = np.random.default_rng(2).uniform(-1.2, 1.2, (1000, 3))
    res = b.closest_points(q)
    np.testing.assert_allclose(res.distance, brute_closest_distance(q, tris), atol=1e-9, rtol=0)


def test_closest_point_result_invariants():
    m = icosphere(2)
    b = build_bvh(m)
    q = np.random.default_rng(0).normal(size=(300, 3))
    r = b.closest_points(q)
    assert np.all(r.barycentric >= -1e-12) and np.all(r.barycentric <= 1 + 1e-12)
    np.testing.assert_allclose(r.barycentric.sum(axis=1), 1.0, atol=1e-9)
    recon = np.einsum("nk,nkd->nd", r.barycentric, m.vertices[m.faces[r.face]])
    np.testing.assert_allclose(recon, r.point, atol=1e-9)


def test_closest_point_at_vertex_and_above_face():
    m = box()
    r = closest_point(build_bvh(m), m.vertices[3])
    assert r.distance == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(r.point, m.vertices[3], atol=1e-12)
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    c = tri.mean(axis=0)
    r = closest_point(build_bvh(soup([tri])), c + [0, 0, 0.3])
    np.testing.assert_allclose(r.point, c, atol=1e-12)
    assert r.distance == pytest.approx(0.3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60))
def test_closest_point_property(seed, n):
    tris = random_triangles(n, seed=seed, scale=0.3)
    q = np.random.default_rng(seed + 1).uniform(-1.5, 1.5, (20, 3))
    d = build_bvh(soup(tris)).closest_points(q).distance
    np.testing.assert_allclose(d, brute_closest_distance(q, tris), atol=1e-9, rtol=0)


# ---------------------------------------------------------------- signed distance

def test_cube_center_and_surface():
    b = build_bvh(box())
    assert signed_distance(b, [0, 0, 0]) == pytest.approx(-0.5)
    assert signed_distance(b, [0.5, 0.1, -0.2]) == pytest.approx(0.0, abs=1e-9)


def test_sphere_signed_distance_within_chord_error():
    m = icosphere(4, 0.6)
    b = build_bvh(m)
    q = np.random.default_rng(5).uniform(-1, 1, (1000, 3))
    sd = b.signed_distance(q)
    bound = icosphere_chord_error(4, 0.6)
    assert np.abs(sd - (np.linalg.norm(q, axis=1) - 0.6)).max() <= bound + 1e-12


@pytest.mark.parametrize("method", ["pseudonormal", "winding"])
def test_sign_methods_agree_on_closed_mesh(method):
    m = cylinder(0.3, 1.0, 24)
    b = build_bvh(m)
    q = np.random.default_rng(1).uniform(-0.8, 0.8, (500, 3))
    inside = (np.hypot(q[:, 0], q[:, 2]) < 0.3 - 1e-3) & (np.abs(q[:, 1]) < 0.5 - 1e-3)
    outside = (np.hypot(q[:, 0], q[:, 2]) > 0.3 + 1e-3) | (np.abs(q[:, 1]) > 0.5 + 1e-3)
    sd = b.signed_distance(q, method)
    assert np.all(sd[inside] < 0) and np.all(sd[outside] > 0)


def test_winding_number_inside_outside():
    m = icosphere(3, 0.5)
    w = winding_number(m, np.array([[0, 0, 0], [0.2, 0.1, 0], [2, 0, 0]]))
    np.testing.assert_allclose(w, [1, 1, 0], atol=1e-6)


def test_sign_changes_once_along_a_ray():
    b = build_bvh(icosphere(3, 0.5))
    t = np.linspace(-1, 1, 2001)[:, None]
    sd = b.signed_distance(t * np.array([0.6, 0.3, 0.74]) / np.linalg.norm([0.6, 0.3, 0.74]))
    assert np.count_nonzero(np.diff(np.sign(sd)) != 0) == 2  # in and out once each


def test_eikonal_away_from_surface():
    m = icosphere(4, 0.5)
    b = build_bvh(m)
    rng = np.random.default_rng(0)
    q = rng.uniform(-1, 1, (4000, 3))
    chord = icosphere_chord_error(4, 0.5)
    edge = np.linalg.norm(m.vertices[m.faces[0, 0]] - m.vertices[m.faces[0, 1]])
    q = q[np.abs(np.linalg.norm(q, axis=1) - 0.5) > 2 * edge + chord][:1000]
    g = central_gradient(b.signed_distance, q, 1e-4)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-2)


# ---------------------------------------------------------------- raycast

def test_ray_into_cube_face():
    b = build_bvh(box())
    hit = raycast(b, [0, 0, -2], [0, 0, 1])
    assert hit.t == pytest.approx(1.5)
    assert raycast(b, [0, 0, -2], [0, 0, -1]) is None


def test_raycast_matches_brute_force():
    tris = random_triangles(800, seed=7, scale=0.2)
    b = build_bvh(soup(tris))
    rng = np.random.default_rng(8)
    o = rng.uniform(-1.5, 1.5, (1000, 3))
    d = rng.normal(size=(1000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t, f, _ = b.raycast(o, d)
    for i in range(1000):
        tb, fb = brute_raycast(o[i], d[i], tris)
        if fb < 0:
            assert f[i] < 0
        else:
            assert t[i] == pytest.approx(tb, abs=1e-9)


def test_occluded_agrees_with_raycast():
    tris = random_triangles(300, seed=9, scale=0.2)
    b = build_bvh(soup(tris))
    rng = np.random.default_rng(3)
    o = rng.uniform(-1, 1, (500, 3))
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    _, f, _ = b.raycast(o, d)
    np.testing.assert_array_equal(b.occluded(o, d), f >= 0)


# ---------------------------------------------------------------- sampling

def test_sampling_follows_area():
    v = np.array([[0, 0, 0], [3, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1]], float)
    m = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])  # areas 1.5 and 0.5
    s = sample_surface(m, 40000, seed=0)
    counts = np.bincount(s.faces, minlength=2)
    assert counts[0] / counts[1] == pytest.approx(3.0, rel=0.02)


def test_sampling_chi_square_uniform():
    from scipy.stats import chisquare
    m = icosphere(2)
    s = sample_surface(m, 50000, seed=4)
    expected = m.face_areas() / m.face_areas().sum() * 50000
    assert chisquare(np.bincount(s.faces, minlength=m.n_faces), expected).pvalue > 0.01


def test_single_sample_inside_triangle_and_determinism():
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    s = sample_surface(soup(tri), 1, seed=3)
    x, y, z = s.points[0]
    assert z == 0 and x >= 0 and y >= 0 and x + y <= 1
    a = sample_surface(icosphere(2), 100, seed=9)
    b = sample_surface(icosphere(2), 100, seed=9)
    np.testing.assert_array_equal(a.points, b.points)


def test_missing_attributes_flagged():
    m = icosphere(1)
    s = sample_surface(m, 10)
    assert s.colors is None and "colors" in s.missing and "uvs" in s.missing
    c = sample_surface(m.with_attributes(colors=np.full((m.n_vertices, 3), 0.25)), 10)
    np.testing.assert_allclose(c.colors, 0.25)
