"""Training data generation and the three-phase training loop.

Dataset layout under a dataset directory::

    scans/<scan>.ply          normalized textured scan
    bodies/<scan>.ply         body mesh with per-vertex UVs, same frame
    views/<scan>/<pair>/      front.png back.png front_normal.mci back_normal.mci
                              mask.png body_uv.mci camera.json
    samples/<scan>.bin        query points with ground truth (format below)
    train.json                the run configuration used to build it (all but the thread count)

Sample file: magic ``b"SMP1"``, u32 version, u64 count n, then arrays in
this order, all little-endian: x float32 (n, 3), d float32 (n), r float32
(n, 3), normal float32 (n, 3), scan_id uint32 (n), pair int32 (n).  A pair
of -1 means the sample is not tied to a particular view pair.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .bvh import BVH, build_bvh
from .config import RunConfig
from .embed import EMBED_DIM, BodyPrior, depth_only_embedding
from .mesh import MeshError, TriangleMesh, normalize_to_cube, sample_surface
from .meshio import load_mesh, save_mesh
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.layers import note_signs
from .net.model import FieldModel
from .net.optim import AdamState, adam_step
from .net.params import ParameterSet
from .raster import (MultiChannelImage, OrthoCamera, load_mci, load_png, make_view_pair, render,
                     save_mask_png, save_mci, save_png, view_azimuths)

log = logging.getLogger("meshfield.trainer")

SAMPLE_MAGIC = b"SMP1"
SAMPLE_VERSION = 1
PAIR_FILES = ("front.png", "back.png", "front_normal.mci", "back_normal.mci", "mask.png",
              "body_uv.mci", "camera.json")
PHASES = ("normal", "geometry", "color")


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------- samples

@dataclass
class TrainingSample:
    x: np.ndarray
    d: float
    r: np.ndarray
    n: np.ndarray
    scan_id: int
    pair: int


@dataclass
class SampleSet:
    """Struct-of-arrays store of training samples."""

    x: np.ndarray
    d: np.ndarray
    r: np.ndarray
    n: np.ndarray
    scan_id: np.ndarray
    pair: np.ndarray

    def __len__(self) -> int:
        return len(self.d)

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(self.x[i], float(self.d[i]), self.r[i], self.n[i],
                              int(self.scan_id[i]), int(self.pair[i]))

    def to_bytes(self) -> bytes:
        n = len(self)
        parts = [SAMPLE_MAGIC, struct.pack("<IQ", SAMPLE_VERSION, n)]
        parts += [np.ascontiguousarray(a, dtype=t).tobytes() for a, t in (
            (self.x, "<f4"), (self.d, "<f4"), (self.r, "<f4"), (self.n, "<f4"),
            (self.scan_id, "<u4"), (self.pair, "<i4"))]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SampleSet":
        if data[:4] != SAMPLE_MAGIC:
            raise DatasetError("not a sample file (bad magic)")
        version, n = struct.unpack_from("<IQ", data, 4)
        if version != SAMPLE_VERSION:
            raise DatasetError(f"unsupported sample file version {version}")
        off = 16
        out = []
        for t, width in (("<f4", 3), ("<f4", 1), ("<f4", 3), ("<f4", 3), ("<u4", 1), ("<i4", 1)):
            a = np.frombuffer(data, dtype=t, count=n * width, offset=off)
            off += a.nbytes
            out.append(a.reshape(n, width) if width > 1 else a.copy())
        if off != len(data):
            raise DatasetError("sample file size does not match its header")
        return cls(*(np.array(a) for a in out))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SampleSet":
        return cls.from_bytes(Path(path).read_bytes())


def ground_truth(scan: TriangleMesh, bvh: BVH, x, sign_method: str = "auto"):
    """Signed distance, closest-surface color and SDF-gradient normal at points ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    d, cp = bvh.signed_distance_full(x, sign_method)
    corners = scan.faces[cp.face]
    if scan.colors is not None:
        r = np.clip(np.einsum("nk,nkd->nd", cp.barycentric, scan.colors[corners]), 0.0, 1.0)
    else:
        r = np.full((len(x), 3), 0.5)
    v = x - cp.point
    length = np.linalg.norm(v, axis=1)
    n = scan.face_normals()[cp.face].copy()
    far = length > 1e-9
    sign = np.where(d[far] < 0, -1.0, 1.0)
    n[far] = sign[:, None] * v[far] / length[far, None]
    return d, r, n


def generate_samples(scan: TriangleMesh, n: int = 40960, seed: int = 0, shell_sigma: float = 0.05,
                     surface_fraction: float = 0.9, scan_id: int = 0, sign_method: str = "auto",
                     bvh: BVH | None = None) -> SampleSet:
    """Surface points jittered by N(0, shell_sigma^2 I) mixed with uniform points in the cube."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    n_surf = int(round(n * surface_fraction))
    parts = []
    if n_surf:
        surf = sample_surface(scan, n_surf, seed=int(rng.integers(2**31)))
        parts.append(surf.points + rng.normal(0.0, shell_sigma, (n_surf, 3)))
    parts.append(rng.uniform(-1.0, 1.0, (n - n_surf, 3)))
    x = np.clip(np.concatenate(parts), -1.0, 1.0)
    bvh = bvh or build_bvh(scan)
    d, r, nrm = ground_truth(scan, bvh, x, sign_method)
    return SampleSet(x.astype(np.float32), d.astype(np.float32), r.astype(np.float32),
                     nrm.astype(np.float32), np.full(n, scan_id, np.uint32), np.full(n, -1, np.int32))


# ---------------------------------------------------------------- losses

def fd_stencil(x, h: float) -> np.ndarray:
    """(n, 7, 3): each point followed by its +/- h neighbours along x, y, z."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    offs = np.zeros((7, 3))
    for i in range(3):
        offs[1 + 2 * i, i] = h
        offs[2 + 2 * i, i] = -h
    return x[:, None, :] + offs


def geometry_loss_terms(values, d, n, lambda_n: float = 0.1, fd_step: float = 0.005,
                        normalize: bool = True):
    """SDF L1 plus the finite-difference normal term, from field values on ``fd_stencil``.

    Returns (loss, d loss / d values, {"sdf": ..., "normal": ...}).  Means
    are taken over samples.
    """
    v = np.asarray(values)
    dt = v.dtype
    b = v.shape[0]
    d = np.asarray(d, dtype=dt).reshape(b)
    n = np.asarray(n, dtype=dt).reshape(b, 3)
    res = v[:, 0] - d
    note_signs(res)
    l1 = np.abs(res).mean()
    g = (v[:, 1::2] - v[:, 2::2]) / dt.type(2.0 * fd_step)
    dv = np.zeros_like(v)
    dv[:, 0] = np.sign(res) / b
    if normalize:
        norm = np.sqrt((g * g).sum(axis=1) + dt.type(1e-20))
        gh = g / norm[:, None]
        cos = (n * gh).sum(axis=1)
        term = (1.0 - cos).mean()
        dg = -(n - cos[:, None] * gh) / norm[:, None] / b
    else:
        term = (1.0 - (n * g).sum(axis=1)).mean()
        dg = -n / b
    dg = dg * dt.type(lambda_n / (2.0 * fd_step))
    dv[:, 1::2] += dg
    dv[:, 2::2] -= dg
    return l1 + lambda_n * term, dv, {"sdf": float(l1), "normal": float(term)}


def geometry_loss(pred_fn, x, d, n, lambda_n: float = 0.1, fd_step: float = 0.005,
                  normalize: bool = True):
    """Loss of the field ``pred_fn: (m, 3) -> (m,)`` on samples; also d loss / d values."""
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    pts = fd_stencil(x, fd_step)
    vals = np.asarray(pred_fn(pts.reshape(-1, 3))).reshape(len(pts), 7)
    loss, dv, _ = geometry_loss_terms(vals, d, n, lambda_n, fd_step, normalize)
    return loss, dv


def color_loss(pred, target):
    """Mean absolute error over samples and channels, with its gradient."""
    pred = np.asarray(pred)
    res = pred - np.asarray(target, dtype=pred.dtype)
    note_signs(res)
    return np.abs(res).mean(), np.sign(res) / res.size


def normal_image_loss(pred, target, mask):
    """L1 between predicted and target normals over masked pixels (mean per channel)."""
    res = pred - target
    note_signs(res)
    w = np.broadcast_to(mask, res.shape)
    denom = max(float(w.sum()), 1.0)
    return (np.abs(res) * w).sum() / denom, np.sign(res) * w / denom


# ---------------------------------------------------------------- dataset

def _find_mesh(directory: Path, stem: str):
    for suf in (".ply", ".obj"):
        p = directory / f"{stem}{suf}"
        if p.exists():
            return p
    return None


def render_pair(scan: TriangleMesh, body: TriangleMesh, azimuth: float, elevation: float,
                span: float, size: int) -> dict:
    front, back = make_view_pair(azimuth, elevation, span, size)
    f = render(front, scan, ["rgb", "alpha", "normal"])
    b = render(back, scan, ["rgb", "alpha", "normal"])
    fu = render(front, body, ["uv", "alpha"])
    bu = render(back, body, ["uv", "alpha"])
    uv = MultiChannelImage(size, size, {"front_uv": fu["uv"], "front_alpha": fu["alpha"],
                                        "back_uv": bu["uv"], "back_alpha": bu["alpha"]})
    return {"front": front, "back": back, "front_img": f, "back_img": b, "body_uv": uv}


def write_pair(pair_dir: Path, rendered: dict, azimuth: float) -> None:
    pair_dir.mkdir(parents=True, exist_ok=True)
    f, b = rendered["front_img"], rendered["back_img"]
    save_png(pair_dir / "front.png", f.subset("rgb", "alpha"))
    save_png(pair_dir / "back.png", b.subset("rgb", "alpha"))
    save_mci(pair_dir / "front_normal.mci", f.subset("normal", "alpha"))
    save_mci(pair_dir / "back_normal.mci", b.subset("normal", "alpha"))
    save_mask_png(pair_dir / "mask.png", f["alpha"])
    save_mci(pair_dir / "body_uv.mci", rendered["body_uv"])
    cams = {"azimuth": float(azimuth), "front": rendered["front"].to_dict(), "back": rendered["back"].to_dict()}
    (pair_dir / "camera.json").write_text(json.dumps(cams, indent=1, sort_keys=True))


def datagen(cfg: RunConfig) -> dict:
    """Build a dataset from ``cfg.datagen.scans_dir`` / ``bodies_dir``.

    A scan that cannot be read (or lacks a body) is reported and skipped.
    """
    dg = cfg.datagen
    scans_dir, bodies_dir, out = Path(dg.scans_dir), Path(dg.bodies_dir), Path(dg.out_dir)
    if not scans_dir.is_dir():
        raise DatasetError(f"scans directory {str(scans_dir)!r} does not exist")
    kernels.set_num_threads(cfg.resolved_workers())
    files = sorted(p for p in scans_dir.iterdir() if p.suffix.lower() in (".ply", ".obj"))
    out.mkdir(parents=True, exist_ok=True)
    done, errors = [], []
    for scan_id, path in enumerate(files):
        stem = path.stem
        try:
            scan = load_mesh(path)
            bpath = _find_mesh(bodies_dir, stem)
            if bpath is None:
                raise DatasetError(f"no body mesh for scan {stem!r} in {str(bodies_dir)!r}")
            body = load_mesh(bpath)
            if body.uvs is None:
                raise MeshError(f"body mesh {str(bpath)!r} has no per-vertex UVs")
            if scan.colors is None:
                log.warning("scan %s has no vertex colors; using gray", stem)
                scan = scan.with_attributes(colors=np.full((scan.n_vertices, 3), 0.5))
            if dg.normalize:
                scan, s, off = normalize_to_cube(scan)
                body = body.transformed(scale=s, offset=s * off)
            elif np.abs(scan.vertices).max() > 1.0:
                raise DatasetError(f"scan {stem!r} does not fit in [-1, 1]^3 (enable normalize)")
        except (OSError, ValueError) as e:
            errors.append({"file": str(path), "error": str(e)})
            log.error("skipping %s: %s", path, e)
            continue
        (out / "scans").mkdir(exist_ok=True)
        (out / "bodies").mkdir(exist_ok=True)
        (out / "samples").mkdir(exist_ok=True)
        save_mesh(out / "scans" / f"{stem}.ply", scan)
        save_mesh(out / "bodies" / f"{stem}.ply", body)
        azimuths = view_azimuths(dg.n_views)
        for k, az in enumerate(azimuths):
            rendered = render_pair(scan, body, az, dg.elevation, dg.span, dg.image_size)
            write_pair(out / "views" / stem / f"{k:03d}", rendered, az)
        seed = int(np.random.default_rng([cfg.seed, scan_id]).integers(2**31))
        samples = generate_samples(scan, dg.n_samples, seed, dg.shell_sigma, dg.surface_fraction,
                                   scan_id, dg.sign_method)
        samples.save(out / "samples" / f"{stem}.bin")
        done.append(stem)
        log.info("scan %s: %d views, %d samples", stem, len(azimuths), len(samples))
    settings = cfg.to_dict()
    settings.pop("workers")  # thread count never changes the data, so it is not recorded
    (out / "train.json").write_text(json.dumps(settings, indent=2, sort_keys=True))
    return {"scans": done, "errors": errors, "out_dir": str(out)}


@dataclass
class ViewPair:
    rgb: np.ndarray  # (2, H, W, 3) front, back
    mask: np.ndarray  # (2, H, W, 1)
    normal: np.ndarray  # (2, H, W, 3)
    cameras: tuple


def load_view_pair(pair_dir) -> ViewPair:
    pair_dir = Path(pair_dir)
    missing = [str(pair_dir / f) for f in PAIR_FILES if not (pair_dir / f).exists()]
    if missing:
        raise DatasetError("missing modality files: " + ", ".join(missing))
    f = load_png(pair_dir / "front.png")
    b = load_png(pair_dir / "back.png")
    fn = load_mci(pair_dir / "front_normal.mci")
    bn = load_mci(pair_dir / "back_normal.mci")
    cams = json.loads((pair_dir / "camera.json").read_text())
    return ViewPair(np.stack([f["rgb"], b["rgb"]]), np.stack([fn["alpha"], bn["alpha"]]),
                    np.stack([fn["normal"], bn["normal"]]),
                    (OrthoCamera.from_dict(cams["front"]), OrthoCamera.from_dict(cams["back"])))


def mirrored_pair(pair: ViewPair) -> ViewPair:
    """The pair with its back view replaced by the horizontally flipped front view."""
    rgb = pair.rgb.copy()
    mask = pair.mask.copy()
    normal = pair.normal.copy()
    rgb[1] = rgb[0, :, ::-1]
    mask[1] = mask[0, :, ::-1]
    normal[1] = normal[0, :, ::-1] * np.array([-1.0, 1.0, 1.0], dtype=np.float32)
    return ViewPair(rgb, mask, normal, pair.cameras)


# ---------------------------------------------------------------- embedding cache

class EmbeddingCache:
    """Body-embedding pieces for every stencil point of a scan's samples.

    The camera-independent parts (closest point, signed distance, UV) are
    computed once; visibility is computed per view pair on first use.
    """

    def __init__(self, body: BodyPrior, points):
        self.body = body
        self.points = np.asarray(points, dtype=np.float64)
        flat = self.points.reshape(-1, 3)
        d, cp = body.bvh.signed_distance_full(flat, body.sign_method)
        self.d = d.reshape(self.points.shape[:-1])
        self.offset = (flat - cp.point).reshape(self.points.shape)
        uv = np.einsum("nk,nkd->nd", cp.barycentric, body.mesh.uvs[body.mesh.faces[cp.face]])
        self.uv = uv.reshape(self.points.shape[:-1] + (2,))
        self.anchor = cp.point
        self._vis: dict = {}

    def visibility(self, key, front, back) -> np.ndarray:
        if key not in self._vis:
            self._vis[key] = self.body.visibility(self.anchor, front, back).astype(np.int8).reshape(self.d.shape)
        return self._vis[key]

    def rows(self, idx, key, front, back) -> np.ndarray:
        vis = self.visibility(key, front, back)[idx]
        n_c = self.offset[idx] @ front.rotation.T
        return np.concatenate([self.d[idx][..., None], n_c, self.uv[idx], vis[..., None]], axis=-1)


# ---------------------------------------------------------------- training

@dataclass
class Batch:
    rgb: np.ndarray
    mask: np.ndarray
    normal: np.ndarray
    cameras: tuple
    points: np.ndarray  # (B, 7, 3) stencil
    embedding: np.ndarray  # (B, 7, EMBED_DIM)
    d: np.ndarray
    n: np.ndarray
    r: np.ndarray


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Trainer:
    def __init__(self, cfg: RunConfig, dataset_dir=None):
        self.cfg = cfg
        self.dataset = Path(dataset_dir or cfg.train.dataset_dir)
        scans_dir = self.dataset / "scans"
        if not scans_dir.is_dir():
            raise DatasetError(f"dataset has no scans directory: {str(scans_dir)!r}")
        self.names = sorted(p.stem for p in scans_dir.glob("*.ply"))
        if not self.names:
            raise DatasetError(f"no scans found in {str(scans_dir)!r}")
        kernels.set_num_threads(cfg.resolved_workers())
        tc = cfg.train
        self.samples, self.pairs, self.embeds = [], [], []
        missing = []
        for name in self.names:
            sp = self.dataset / "samples" / f"{name}.bin"
            bp = self.dataset / "bodies" / f"{name}.ply"
            vdir = self.dataset / "views" / name
            for p in (sp, bp, vdir):
                if not p.exists():
                    missing.append(str(p))
        if missing:
            raise DatasetError("missing modality files: " + ", ".join(missing))
        for name in self.names:
            s = SampleSet.load(self.dataset / "samples" / f"{name}.bin")
            self.samples.append(s)
            pairs = [load_view_pair(d) for d in sorted((self.dataset / "views" / name).iterdir()) if d.is_dir()]
            if not pairs:
                raise DatasetError(f"scan {name!r} has no view pairs")
            if cfg.mirror_hallucination:
                pairs = [mirrored_pair(p) for p in pairs]
            self.pairs.append(pairs)
            stencil = fd_stencil(s.x, tc.fd_step)
            if cfg.no_body_embedding:
                self.embeds.append(stencil)
            else:
                body = BodyPrior(load_mesh(self.dataset / "bodies" / f"{name}.ply"))
                self.embeds.append(EmbeddingCache(body, stencil))
        self.model = FieldModel(cfg.network)
        self.steps = {"normal": 0 if cfg.no_normal_guidance else tc.normal_steps,
                      "geometry": tc.geometry_steps, "color": tc.color_steps}

    # -- batches ------------------------------------------------------

    def make_batch(self, phase: str, k: int, batch_points: int | None = None) -> Batch:
        """Deterministic batch for step ``k`` of ``phase``."""
        rng = np.random.default_rng([self.cfg.seed, PHASES.index(phase) if phase in PHASES else 3, k])
        si = int(rng.integers(len(self.names)))
        pi = int(rng.integers(len(self.pairs[si])))
        pair = self.pairs[si][pi]
        if phase == "normal":
            empty = np.zeros((0, 7, 3))
            return Batch(pair.rgb, pair.mask, pair.normal, pair.cameras, empty,
                         np.zeros((0, 7, EMBED_DIM)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        s = self.samples[si]
        b = min(batch_points or self.cfg.train.batch_points, len(s))
        idx = np.sort(rng.choice(len(s), size=b, replace=False))
        front, back = pair.cameras
        e = self.embeds[si]
        if isinstance(e, EmbeddingCache):
            pts = e.points[idx]
            emb = e.rows(idx, pi, front, back)
        else:
            pts = e[idx]
            emb = depth_only_embedding(pts.reshape(-1, 3), front).reshape(b, 7, EMBED_DIM)
        return Batch(pair.rgb, pair.mask, pair.normal, pair.cameras, pts, emb,
                     s.d[idx], s.n[idx], s.r[idx])

    # -- losses -------------------------------------------------------

    def loss_and_grad(self, P: ParameterSet, phase: str, batch: Batch):
        """Loss of one phase ("normal", "geometry", "color" or "joint") and its gradient."""
        m, cfg, tc = self.model, self.cfg, self.cfg.train
        dt = P.dtype
        G = P.zeros_like()
        rgb = batch.rgb.astype(dt)
        mask = batch.mask.astype(dt)
        parts = {}
        total = 0.0
        if phase == "normal":
            pred, cache = m.predict_normals(P, rgb)
            loss, dn = normal_image_loss(pred, batch.normal.astype(dt), mask)
            m.normals_backward(P, G, cache, dn)
            return float(loss), G, {"normal_l1": float(loss)}
        if phase in ("geometry", "joint"):
            if cfg.no_normal_guidance:
                geo_in, ncache = rgb, None
            else:
                nrm, ncache = m.predict_normals(P, rgb)
                geo_in = nrm * mask
            feats = m.encode(P, "geometry", geo_in, batch.cameras)
            b = len(batch.d)
            vals, hc = m.head_forward(P, "geometry", feats, batch.points.reshape(-1, 3),
                                      batch.embedding.reshape(-1, EMBED_DIM))
            loss, dv, gp = geometry_loss_terms(vals.reshape(b, 7), batch.d, batch.n, tc.lambda_n,
                                               tc.fd_step, tc.normalize_fd_gradient)
            dmaps = m.head_backward(P, G, "geometry", feats, hc, dv.reshape(-1))
            dimg = m.encode_backward(P, G, "geometry", feats, dmaps, need_input_grad=ncache is not None)
            if ncache is not None:
                m.normals_backward(P, G, ncache, dimg * mask)
            total += float(loss)
            parts.update(gp)
        if phase in ("color", "joint"):
            feats = m.encode(P, "color", rgb, batch.cameras)
            rgb_pred, hc = m.head_forward(P, "color", feats, batch.points[:, 0], batch.embedding[:, 0])
            loss, dc = color_loss(rgb_pred, batch.r)
            dmaps = m.head_backward(P, G, "color", feats, hc, dc)
            m.encode_backward(P, G, "color", feats, dmaps, need_input_grad=False)
            total += float(loss)
            parts["color"] = float(loss)
        if phase not in ("geometry", "color", "joint"):
            raise ValueError(f"unknown phase {phase!r}")
        return total, G, parts

    def learning_rates(self, P: ParameterSet, phase: str) -> np.ndarray:
        tc = self.cfg.train
        lr = np.zeros(P.size, dtype=P.dtype)
        if phase == "normal":
            lr[P.mask(["normal."])] = tc.normal_lr
        elif phase == "geometry":
            lr[P.mask(["geo_enc.", "geo_mlp."])] = tc.lr
            if not self.cfg.no_normal_guidance:
                lr[P.mask(["normal."])] = tc.normal_finetune_lr
        else:
            lr[P.mask(["color_enc.", "color_mlp."])] = tc.lr
        return lr

    # -- loop ---------------------------------------------------------

    def state_path(self, checkpoint) -> Path:
        return Path(str(checkpoint) + ".state.npz")

    def train(self, checkpoint=None, stop_after: int | None = None) -> dict:
        """Run (or resume) all phases; ``stop_after`` halts after that many global steps."""
        cfg = self.cfg
        checkpoint = Path(checkpoint or cfg.train.checkpoint)
        t0 = time.perf_counter()
        P = self.model.init_params(cfg.seed)
        curves = {ph: [] for ph in PHASES}
        start = 0
        state = None
        if cfg.train.resume and self.state_path(checkpoint).exists():
            _, P = load_checkpoint(checkpoint, cfg.network)
            st = np.load(self.state_path(checkpoint), allow_pickle=False)
            start = int(st["global_step"])
            state = AdamState(st["m"].copy(), st["v"].copy(), int(st["t"]))
            curves = json.loads(str(st["curves"]))
            log.info("resuming at global step %d", start)
        schedule = [(ph, k) for ph in PHASES for k in range(self.steps[ph])]
        g = start
        for g in range(start, len(schedule)):
            if stop_after is not None and g >= stop_after:
                break
            phase, k = schedule[g]
            if k == 0 or state is None:
                state = AdamState.zeros(P)
            lr = self.learning_rates(P, phase)
            batch = self.make_batch(phase, k)
            loss, G, parts = self.loss_and_grad(P, phase, batch)
            adam_step(P, G, state, lr)
            curves[phase].append(loss)
            if cfg.train.log_every and k % cfg.train.log_every == 0:
                log.info("%s step %d loss %.6f %s", phase, k, loss, parts)
        else:
            g = len(schedule)
        save_checkpoint(checkpoint, cfg.network, P)
        np.savez(self.state_path(checkpoint), m=state.m if state else np.zeros(0), v=state.v if state else np.zeros(0),
                 t=state.t if state else 0, global_step=g, curves=json.dumps(curves))
        return {
            "checkpoint": str(checkpoint),
            "checkpoint_sha256": _sha256(checkpoint),
            "global_step": g,
            "total_steps": len(schedule),
            "seed": cfg.seed,
            "losses": curves,
            "final_loss": {ph: (c[-1] if c else None) for ph, c in curves.items()},
            "seconds": time.perf_counter() - t0,
        }


def train(cfg: RunConfig, dataset_dir=None, out_checkpoint=None, stop_after: int | None = None) -> dict:
    return Trainer(cfg, dataset_dir).train(out_checkpoint, stop_after)
