import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshfield.embed import (EMBED_DIM, BodyPrior, FeatureMap, bilinear_matrix, depth_only_embedding,
                             embed_point, query_bilinear, query_points)
from meshfield.mesh import MeshError
from meshfield.raster import OrthoCamera, make_view_pair
from meshfield.shapes import concat, cylinder, icosphere


def with_uvs(m):
    uv = (m.vertices[:, :2] + 1.0) / 2.0
    return m.with_attributes(uvs=np.clip(uv, 0, 1))


def fmap(h=8, w=10, d=4, seed=0, size=None):
    data = np.random.default_rng(seed).normal(size=(h, w, d)).astype(np.float32)
    cam = OrthoCamera(height=size or h, width=size or w) if size else OrthoCamera(height=h, width=w)
    return FeatureMap(data, cam)


def test_query_at_texel_center_and_midpoint():
    fm = fmap()
    np.testing.assert_allclose(query_bilinear(fm, 3.0, 5.0), fm.data[5, 3])
    np.testing.assert_allclose(query_bilinear(fm, 3.5, 5.0), (fm.data[5, 3] + fm.data[5, 4]) / 2, rtol=1e-6)


def test_query_matches_four_term_formula():
    fm = fmap(12, 9, 5, seed=2)
    rng = np.random.default_rng(3)
    u = rng.uniform(0, 8, 1000)
    v = rng.uniform(0, 11, 1000)
    got = query_bilinear(fm, u, v)
    x0, y0 = np.floor(u).astype(int), np.floor(v).astype(int)
    x1, y1 = np.minimum(x0 + 1, 8), np.minimum(y0 + 1, 11)
    ax, ay = (u - x0)[:, None], (v - y0)[:, None]
    d = fm.data.astype(np.float64)
    want = ((1 - ax) * (1 - ay) * d[y0, x0] + ax * (1 - ay) * d[y0, x1]
            + (1 - ax) * ay * d[y1, x0] + ax * ay * d[y1, x1])
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_out_of_range_queries_clamp_to_border():
    fm = fmap()
    np.testing.assert_allclose(query_bilinear(fm, -5.0, -3.0), fm.data[0, 0])
    np.testing.assert_allclose(query_bilinear(fm, 50.0, 2.0), fm.data[2, -1])


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
       st.floats(0, 9, allow_nan=False), st.floats(0, 7, allow_nan=False))
def test_exact_on_affine_maps(a, b, c, u, v):
    h, w = 8, 10
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    data = (a * jj + b * ii + c)[..., None].astype(np.float64)
    fm = FeatureMap(data, OrthoCamera(height=h, width=w))
    assert query_bilinear(fm, u, v)[0] == pytest.approx(a * u + b * v + c, abs=1e-9)


def test_feature_map_coarser_than_image():
    # a 4x4 map over a 16x16 image: image pixel 1.5 sits on texel 0 center
    fm = fmap(4, 4, 2, size=16)
    np.testing.assert_allclose(query_bilinear(fm, 1.5, 1.5), fm.data[0, 0])
    np.testing.assert_allclose(query_bilinear(fm, 5.5, 9.5), fm.data[2, 1])


def test_bilinear_matrix_transpose_is_adjoint():
    rng = np.random.default_rng(0)
    fu, fv = rng.uniform(-1, 10, 50), rng.uniform(-1, 8, 50)
    m = bilinear_matrix(fu, fv, 8, 10)
    a, b = rng.normal(size=80), rng.normal(size=50)
    assert (m @ a) @ b == pytest.approx(a @ (m.T @ b))
    np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), 1.0)


def test_query_points_projects():
    fm = fmap(16, 16, 3, seed=5)
    x = np.array([[0.0, 0.0, 0.7]])
    np.testing.assert_allclose(query_points(fm, x)[0], fm.data[7:9, 7:9].mean(axis=(0, 1)), rtol=1e-5)


# ---------------------------------------------------------------- body embedding

@pytest.fixture(scope="module")
def sphere_body():
    return BodyPrior(with_uvs(icosphere(3, 0.5)))


def test_missing_uvs_rejected():
    with pytest.raises(MeshError):
        BodyPrior(icosphere(1))


def test_vertex_query_front_visible(sphere_body):
    f, b = make_view_pair(0.0)
    m = sphere_body.mesh
    k = int(np.argmin(m.vertices[:, 2]))  # the vertex closest to the front camera
    e = embed_point(sphere_body, m.vertices[k], f, b)
    assert e.d_c == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(e.n_c, 0.0, atol=1e-12)
    np.testing.assert_allclose(e.u_c, m.uvs[k], atol=1e-12)
    assert e.v_c == 1


def test_offset_along_face_normal(sphere_body):
    f, b = make_view_pair(0.0)
    m = sphere_body.mesh
    fi = int(np.argmin(m.triangles().mean(axis=1)[:, 2]))
    c = m.triangles()[fi].mean(axis=0)
    e = embed_point(sphere_body, c + 0.1 * m.face_normals()[fi], f, b)
    assert e.d_c == pytest.approx(0.1, abs=1e-9)
    assert np.linalg.norm(e.n_c) == pytest.approx(abs(e.d_c), abs=1e-6)


def test_convex_body_visibility_never_zero(sphere_body):
    f, b = make_view_pair(30.0)
    x = np.random.default_rng(0).normal(size=(500, 3))
    p = sphere_body.embed(x, f, b)
    assert set(np.unique(p[:, 6])) <= {1.0, -1.0}
    assert (p[:, 6] == 1).any() and (p[:, 6] == -1).any()


def test_occluded_between_two_cylinders():
    # two side-by-side legs seen from the side: the inner surface faces away from both cameras
    legs = concat(cylinder(0.15, 1.0, 32, center=(-0.2, 0, 0)), cylinder(0.15, 1.0, 32, center=(0.2, 0, 0)))
    body = BodyPrior(with_uvs(legs))
    f, b = make_view_pair(90.0)  # cameras look along the x axis through both legs
    p = body.embed(np.array([[0.0, 0.0, 0.0]]), f, b)
    assert p[0, 6] == 0


def test_embedding_rows_and_frame(sphere_body):
    f, b = make_view_pair(40.0)
    x = np.random.default_rng(1).normal(size=(50, 3)) * 0.6
    world = sphere_body.embed(x, f, b)
    cam = sphere_body.embed(x, f, b, frame=f.rotation)
    assert world.shape == (50, EMBED_DIM)
    np.testing.assert_allclose(np.linalg.norm(world[:, 1:4], axis=1), np.abs(world[:, 0]), atol=1e-6)
    np.testing.assert_allclose(cam[:, 1:4], world[:, 1:4] @ f.rotation.T, atol=1e-12)


def test_embedding_continuity(sphere_body):
    f, b = make_view_pair(0.0)
    errs = []
    for n in (50, 500):
        t = np.linspace(0, 1, n)[:, None]
        seg = np.array([0.3, 0.3, -0.6]) + t * np.array([0.2, -0.1, 0.05])
        p = sphere_body.embed(seg, f, b)
        errs.append(np.abs(np.diff(p[:, :4], axis=0)).max())
    assert errs[1] < errs[0] / 5


def test_depth_only_embedding():
    f, _ = make_view_pair(90.0)
    x = np.array([[0.3, 0.1, -0.2]])
    p = depth_only_embedding(x, f)
    assert p[0, 0] == pytest.approx(x[0] @ f.view_dir)
    assert np.all(p[0, 1:] == 0)
