"""Finite-difference gradient checks shared by the unit and acceptance suites.

Each case returns the gradient_check_detail dict for 64 probes taken on a
float64 copy of freshly initialized parameters.
"""

import numpy as np

from meshfield.config import RunConfig
from meshfield.embed import EMBED_DIM
from meshfield.net.model import FieldModel, NetworkConfig
from meshfield.net.optim import gradient_check_detail
from meshfield.net.params import ParameterSet
from meshfield.raster import make_view_pair

SMALL = NetworkConfig(feature_dim=8, encoder_channels=(6, 8, 8), geometry_width=16, color_width=12,
                      normal_width=6)


def _probe_indices(P, prefixes, rng, n=64):
    idx = np.nonzero(P.mask(prefixes))[0]
    return rng.permutation(idx)[: 4 * n]


def _check(fn, P, prefixes, seed, n=64, richardson=False):
    rng = np.random.default_rng(seed)
    idx = _probe_indices(P, prefixes, rng, n)
    return gradient_check_detail(fn, P, n_probes=n, indices=idx, max_tries=len(idx), richardson=richardson)


def encoder_case(seed=0, head="geometry"):
    m = FieldModel(SMALL)
    P0 = m.init_params(seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (2, 8, 8, 3))
    cams = make_view_pair(0.0, size=8)
    hf = m.encode(P0, head, img, cams).maps.shape
    w = rng.normal(size=hf)

    def fn(flat):
        P = ParameterSet(P0.shapes(), flat=flat)
        G = P.zeros_like()
        f = m.encode(P, head, img, cams)
        m.encode_backward(P, G, head, f, w, need_input_grad=False)
        return float((w * f.maps).sum()), G.flat

    prefix = "geo_enc." if head == "geometry" else "color_enc."
    return _check(fn, P0, [prefix], seed)


def normal_case(seed=0):
    m = FieldModel(SMALL)
    P0 = m.init_params(seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (2, 8, 8, 3))
    w = rng.normal(size=(2, 8, 8, 3))

    def fn(flat):
        P = ParameterSet(P0.shapes(), flat=flat)
        G = P.zeros_like()
        n, c = m.predict_normals(P, img)
        m.normals_backward(P, G, c, w)
        return float((w * n).sum()), G.flat

    return _check(fn, P0, ["normal."], seed)


def head_case(head, seed=0, n_points=16):
    m = FieldModel(SMALL)
    P0 = m.init_params(seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    cams = make_view_pair(20.0, size=8)
    maps = rng.normal(size=(2, 8, 8, SMALL.feature_dim))
    from meshfield.net.model import PairFeatures
    feats = PairFeatures(maps, cams)
    x = rng.uniform(-0.8, 0.8, (n_points, 3))
    p = rng.normal(size=(n_points, EMBED_DIM))
    wshape = (n_points,) if head == "geometry" else (n_points, 3)
    w = rng.normal(size=wshape)

    def fn(flat):
        P = ParameterSet(P0.shapes(), flat=flat)
        G = P.zeros_like()
        y, c = m.head_forward(P, head, feats, x, p)
        m.head_backward(P, G, head, feats, c, w)
        return float((w * y).sum()), G.flat

    prefix = "geo_mlp." if head == "geometry" else "color_mlp."
    return _check(fn, P0, [prefix], seed)


def make_tiny_dataset(root, image_size=16, n_views=2, n_samples=64, seed=0):
    """One textured sphere scan plus a slightly smaller body, run through datagen."""
    from meshfield.meshio import save_mesh
    from meshfield.shapes import icosphere
    from meshfield.trainer import datagen
    scan = icosphere(2, 0.6)
    scan = scan.with_attributes(colors=0.5 + 0.4 * scan.vertices / 0.6)
    body = icosphere(2, 0.5)
    body = body.with_attributes(uvs=(body.vertices[:, :2] / 0.5 + 1) / 2)
    (root / "scans").mkdir(parents=True, exist_ok=True)
    (root / "bodies").mkdir(exist_ok=True)
    save_mesh(root / "scans" / "s.ply", scan)
    save_mesh(root / "bodies" / "s.ply", body)
    cfg = RunConfig.from_dict({"seed": seed, "workers": 1, "datagen": {
        "scans_dir": str(root / "scans"), "bodies_dir": str(root / "bodies"), "out_dir": str(root / "dataset"),
        "n_views": n_views, "image_size": image_size, "n_samples": n_samples}})
    datagen(cfg)
    return root / "dataset"


def total_loss_case(dataset_dir, seed=0, batch_points=1):
    """Gradient of the summed geometry and color loss through every network part."""
    from meshfield.trainer import Trainer
    cfg = RunConfig.from_dict({"seed": seed, "workers": 1, "network": SMALL.to_dict(),
                               "train": {"dataset_dir": str(dataset_dir), "batch_points": batch_points}})
    tr = Trainer(cfg)
    P0 = tr.model.init_params(seed).astype(np.float64)
    batch = tr.make_batch("geometry", 0)

    def fn(flat):
        P = ParameterSet(P0.shapes(), flat=flat)
        loss, G, _ = tr.loss_and_grad(P, "joint", batch)
        return loss, G.flat

    parts = ["normal.", "geo_enc.", "color_enc.", "geo_mlp.", "color_mlp."]
    out = {"max_rel_error": 0.0, "checked": 0, "skipped": 0}
    for k, part in enumerate(parts):
        # the finite-difference normal term is curved enough in the encoder weights that the
        # plain central difference at step 1e-3 carries ~1e-4 truncation error by itself
        r = _check(fn, P0, [part], seed + k, n=16, richardson=True)
        out["max_rel_error"] = max(out["max_rel_error"], r["max_rel_error"])
        out["checked"] += r["checked"]
        out["skipped"] += r["skipped"]
    return out
