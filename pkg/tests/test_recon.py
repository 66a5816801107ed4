import numpy as np
import pytest

from meshfield.net.model import FieldModel
from meshfield.raster import MultiChannelImage, make_view_pair, project, render
from meshfield.recon.align import AlignmentError, align_body, parse_joints, silhouette_iou
from meshfield.recon.field import evaluate_field
from meshfield.recon.mcubes import VoxelGrid, case_table, grid_points, marching_cubes, surface_cells
from meshfield.recon.pipeline import mirror_hallucinate, reconstruct
from meshfield.shapes import icosphere
from meshfield.synthetic import make_humanoid

from gradcases import SMALL


# ---------------------------------------------------------------- mirror back view

def _image(h=6, w=8):
    rgb = np.zeros((h, w, 3))
    rgb[:, :2, 0] = 1.0  # red on the left
    return MultiChannelImage(h, w, {"rgb": rgb, "alpha": np.ones((h, w, 1)), "normal": np.zeros((h, w, 3))})


def test_mirror_moves_left_to_right():
    m = mirror_hallucinate(_image())
    assert np.all(m["rgb"][:, -2:, 0] == 1) and np.all(m["rgb"][:, :-2, 0] == 0)
    assert m.names == ["rgb", "alpha"]


def test_mirror_twice_is_identity():
    rgb = np.random.default_rng(0).random((6, 8, 3))
    img = MultiChannelImage(6, 8, {"rgb": rgb, "alpha": np.ones((6, 8, 1))})
    back = mirror_hallucinate(mirror_hallucinate(img))
    np.testing.assert_array_equal(back["rgb"], img["rgb"])


def test_mirror_needs_rgb_and_alpha():
    with pytest.raises(ValueError):
        mirror_hallucinate(MultiChannelImage(2, 2, {"rgb": np.zeros((2, 2, 3))}))


def test_mirror_matches_back_render_for_symmetric_subject():
    m = icosphere(3, 0.5)
    m = m.with_attributes(colors=np.full((m.n_vertices, 3), 0.3))
    f, b = make_view_pair(0.0, 0.0, 1.0, 64)
    front = render(f, m, ["rgb", "alpha"])
    back = render(b, m, ["rgb", "alpha"])
    diff = mirror_hallucinate(front)["alpha"][..., 0] != back["alpha"][..., 0]
    from scipy.ndimage import binary_dilation, binary_erosion
    a = back["alpha"][..., 0] > 0
    assert not np.any(diff & ~(binary_dilation(a) & ~binary_erosion(a)))


# ---------------------------------------------------------------- alignment

@pytest.fixture(scope="module")
def subject():
    h = make_humanoid(48)
    f, _ = make_view_pair(0.0, 0.0, 1.0, 128)
    mask = render(f, h.body, ["alpha"])["alpha"]
    u, v, _ = project(f, h.joints3d)
    return h, f, mask, np.stack([u, v, np.ones_like(u)], axis=1)


def test_parse_joints_forms():
    a = parse_joints([{"u": 1, "v": 2, "confidence": 0.5}])
    b = parse_joints([((1, 2), 0.5)])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(parse_joints(np.array([[1.0, 2.0, 0.5]])), a)


def test_silhouette_iou():
    a = np.zeros((4, 4), bool)
    a[:2] = True
    b = np.zeros((4, 4), bool)
    b[1:3] = True
    assert silhouette_iou(a, b) == pytest.approx(1 / 3)
    assert silhouette_iou(a, a) == 1.0


def test_alignment_fixed_point(subject):
    h, f, mask, joints = subject
    r = align_body(h.body, mask, joints, f, h.joint_regressor, resolution=128, restarts=1)
    assert r.scale == pytest.approx(1.0, abs=2e-3)
    np.testing.assert_allclose(r.offset[:2], 0.0, atol=2e-3)
    assert r.iou > 0.99


def test_joints_only_alignment_exact(subject):
    h, f, mask, joints = subject
    pert = h.body.transformed(scale=0.9, offset=(-0.05, 0.08, 0.0))
    r = align_body(pert, mask, joints, f, h.joint_regressor, w_s=0.0, w_j=1.0, resolution=64, restarts=1)
    fixed = r.apply(pert)
    np.testing.assert_allclose(fixed.vertices[:, :2], h.body.vertices[:, :2], atol=1e-4)
    assert r.joint_error < 1e-3


def test_alignment_errors(subject):
    h, f, mask, joints = subject
    with pytest.raises(AlignmentError, match="zero area"):
        align_body(h.body, np.zeros((128, 128)), joints, f, h.joint_regressor)
    with pytest.raises(AlignmentError):
        align_body(h.body, np.ones((64, 64)), joints, f, h.joint_regressor)
    with pytest.raises(AlignmentError, match="at least 4"):
        align_body(h.body, mask, joints[:3], f, h.joint_regressor[:3])
    with pytest.raises(AlignmentError):
        align_body(h.body, mask, joints, f, h.joint_regressor[:-1])


# ---------------------------------------------------------------- marching cubes

def _sphere_grid(n, r=0.5, with_rgb=False):
    p = grid_points(n)
    sdf = (np.linalg.norm(p, axis=1) - r).reshape(n, n, n)
    rgb = None
    if with_rgb:
        rgb = ((p + 1) / 2).reshape(n, n, n, 3)
    return VoxelGrid(sdf, rgb)


def test_case_table_uses_only_crossing_edges():
    from meshfield.recon.mcubes import EDGES
    t = case_table()
    assert t.shape[0] == 256
    assert np.all(t[0] == -1) and np.all(t[255] == -1)
    for case in range(1, 255):
        e = t[case][t[case] >= 0]
        assert len(e) % 3 == 0 and len(e) > 0
        inside = [(case >> c) & 1 for c in range(8)]
        for k in e:
            a, b = EDGES[k]
            assert inside[a] != inside[b]


def test_sphere_extraction_closed_and_outward():
    g = _sphere_grid(32)
    m = marching_cubes(g)
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.all(np.abs(r - 0.5) <= 1.5 * g.spacing)
    assert m.is_closed()
    c = m.triangles().mean(axis=1)
    assert np.all((m.face_normals() * c).sum(axis=1) > 0)


def test_empty_and_full_grids():
    n = 8
    assert marching_cubes(VoxelGrid(np.ones((n, n, n)))).n_faces == 0
    assert marching_cubes(VoxelGrid(-np.ones((n, n, n)))).n_faces == 0
    bad = np.ones((n, n, n))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        marching_cubes(VoxelGrid(bad))


def test_colors_are_interpolated():
    g = _sphere_grid(24, with_rgb=True)
    m = marching_cubes(g)
    np.testing.assert_allclose(m.colors, (m.vertices + 1) / 2, atol=1e-9)


def test_surface_cells_single_cell():
    v = np.ones((3, 3, 3))
    v[0, 0, 0] = -1
    cells = surface_cells(v)
    assert cells.sum() == 1 and cells[0, 0, 0]


# ---------------------------------------------------------------- field evaluation

class AnalyticEvaluator:
    """Stand-in for the network: a sphere SDF with position colors, counting queries."""

    def __init__(self, r=0.5):
        self.r, self.calls = r, 0

    def sdf(self, x, chunk=65536):
        x = np.asarray(x).reshape(-1, 3)
        self.calls += len(x)
        return (np.linalg.norm(x, axis=1) - self.r).astype(np.float32)

    def rgb(self, x, chunk=65536):
        return ((np.asarray(x).reshape(-1, 3) + 1) / 2).astype(np.float32)


def test_adaptive_matches_dense_on_surface_cells():
    dense = evaluate_field(AnalyticEvaluator(), 41, adaptive=False)
    ev = AnalyticEvaluator()
    stats = {}
    fast = evaluate_field(ev, 41, adaptive=True, stats=stats)
    cross = surface_cells(dense.sdf)
    np.testing.assert_array_equal(surface_cells(fast.sdf), cross)
    a = marching_cubes(dense)
    b = marching_cubes(fast)
    np.testing.assert_allclose(a.vertices, b.vertices, atol=1e-6)
    assert stats["sdf_evaluations"] < 41 ** 3 / 2
    np.testing.assert_allclose(b.colors, (b.vertices + 1) / 2, atol=1e-6)


def test_resolution_floor():
    with pytest.raises(ValueError):
        evaluate_field(AnalyticEvaluator(), 4)


def test_reconstruct_runs_and_reports():
    model = FieldModel(SMALL)
    P = model.init_params(0)
    m = icosphere(2, 0.5)
    m = m.with_attributes(colors=np.full((m.n_vertices, 3), 0.4),
                          uvs=(m.vertices[:, :2] + 1) / 2)
    f, b = make_view_pair(0.0, 0.0, 1.0, 32)
    front = render(f, m, ["rgb", "alpha"])
    mesh, rep = reconstruct(front, "mirror", m, model, P, (f, b), resolution=16)
    assert rep["back_view"] == "mirror"
    assert rep["alignment"] is None and rep["alignment_skipped"]
    assert rep["n_faces"] == mesh.n_faces
    assert set(rep["timings"]) >= {"encode", "field", "marching_cubes", "total"}
    with pytest.raises(ValueError):
        reconstruct(front, "nope", m, model, P, (f, b), resolution=16)
