import numpy as np
import pytest

from meshfield import kernels
from meshfield.bvh import build_bvh
from meshfield.mesh import MeshError
from meshfield.meshio import load_mesh, save_mesh
from meshfield.raster import make_view_pair, rasterize
from meshfield.shapes import icosphere


def attributed(kind):
    m = icosphere(1, 0.5)
    rng = np.random.default_rng(0)
    kw = {}
    if "c" in kind:
        kw["colors"] = rng.random((m.n_vertices, 3))
    if "n" in kind:
        kw["normals"] = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    if "u" in kind:
        kw["uvs"] = rng.random((m.n_vertices, 2))
    return m.with_attributes(**kw)


@pytest.mark.parametrize("ext", [".ply", ".obj"])
@pytest.mark.parametrize("kind", ["", "c", "n", "u", "cnu"])
def test_round_trip_preserves_attribute_presence(tmp_path, ext, kind):
    m = attributed(kind)
    save_mesh(tmp_path / f"m{ext}", m)
    r = load_mesh(tmp_path / f"m{ext}")
    np.testing.assert_array_equal(r.faces, m.faces)
    atol = 0 if ext == ".ply" else 1e-6
    np.testing.assert_allclose(r.vertices, m.vertices, atol=max(atol, 1e-7))
    for name in ("colors", "normals", "uvs"):
        a, b = getattr(m, name), getattr(r, name)
        assert (a is None) == (b is None), name
        if a is not None:
            # PLY stores 8-bit color
            tol = 1 / 255 if (name == "colors" and ext == ".ply") else 1e-6
            np.testing.assert_allclose(b, a, atol=tol)


def test_obj_vertex_colors_six_floats(tmp_path):
    p = tmp_path / "c.obj"
    p.write_text("v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n")
    m = load_mesh(p)
    np.testing.assert_allclose(m.colors, np.eye(3))


def test_unreadable_file_raises(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_bytes(b"not a ply")
    with pytest.raises((MeshError, ValueError, OSError)):
        load_mesh(p)


@pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")
def test_compiled_and_numpy_backends_identical():
    m = icosphere(3, 0.5)
    b = build_bvh(m)
    rng = np.random.default_rng(0)
    q = rng.uniform(-1, 1, (300, 3))
    d = rng.normal(size=(300, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    a, c = b.closest_points(q, "compiled"), b.closest_points(q, "python")
    for f in ("point", "face", "barycentric", "distance", "region"):
        np.testing.assert_array_equal(getattr(a, f), getattr(c, f))
    for x, y in zip(b.raycast(q, d, backend="compiled"), b.raycast(q, d, backend="python")):
        np.testing.assert_array_equal(x, y)
    cam, _ = make_view_pair(20.0, 5.0, 1.0, 64)
    for x, y in zip(rasterize(cam, m, "compiled"), rasterize(cam, m, "python")):
        np.testing.assert_array_equal(x, y)


def test_thread_count_does_not_change_results():
    m = icosphere(3, 0.5)
    b = build_bvh(m)
    q = np.random.default_rng(1).uniform(-1, 1, (2000, 3))
    old = kernels.num_threads()
    try:
        kernels.set_num_threads(1)
        one = b.closest_points(q).distance
        kernels.set_num_threads(4)
        four = b.closest_points(q).distance
    finally:
        kernels.set_num_threads(old)
    np.testing.assert_array_equal(one, four)
