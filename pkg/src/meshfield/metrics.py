"""Mesh and image comparison: ICP registration, Chamfer, normal consistency, f-score, SSIM."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from . import __version__, kernels
from .mesh import TriangleMesh, sample_surface
from .meshio import load_mesh

LUMA = np.array([0.299, 0.587, 0.114])  # Rec. 601


class MetricsError(ValueError):
    pass


def _points(a, name="points") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if not len(a):
        raise MetricsError(f"{name} is empty")
    return a


def nearest(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each point of ``a`` to its nearest point of ``b``, and that point's index."""
    return cKDTree(_points(b)).query(_points(a), workers=kernels.num_threads())


def _check_spread(p: np.ndarray, name: str) -> None:
    if len(p) < 3:
        raise MetricsError(f"{name} needs at least 3 points")
    s = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise MetricsError(f"{name} is degenerate (collinear or coincident points)")


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R and translation t minimizing sum |R src + t - dst|^2."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


@dataclass
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    rms: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list)

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.rotation.T + self.translation


def icp_align(pred, gt, max_iters: int = 100, tol: float = 1e-6) -> RigidTransform:
    """Point-to-point ICP taking ``pred`` onto ``gt``, started from centroid alignment.

    Stops when the RMS closest-point distance changes by less than ``tol``
    or after ``max_iters`` iterations, and returns the lowest-RMS transform
    seen.  ``history`` holds the RMS at each iteration.
    """
    p = _points(pred, "pred")
    g = _points(gt, "gt")
    _check_spread(p, "pred")
    _check_spread(g, "gt")
    tree = cKDTree(g)
    r = np.eye(3)
    t = g.mean(axis=0) - p.mean(axis=0)
    hist = []
    best = None
    it = 0
    for it in range(1, max_iters + 1):
        d, idx = tree.query(p @ r.T + t, workers=kernels.num_threads())
        rms = float(np.sqrt(np.mean(d * d)))
        hist.append(rms)
        if best is None or rms < best[2]:
            best = (r, t, rms)
        if rms == 0.0 or (len(hist) > 1 and abs(hist[-2] - rms) < tol):
            break
        r, t = kabsch(p, g[idx])
    r, t, rms = best
    return RigidTransform(r, t, rms, it, hist)


def chamfer(a, b, cm_per_unit: float = 100.0, squared: bool = False) -> tuple[float, float]:
    """Mean nearest-neighbour distance a->b and b->a, scaled to centimetres."""
    da, _ = nearest(a, b)
    db, _ = nearest(b, a)
    if squared:
        return float(np.mean(da ** 2) * cm_per_unit ** 2), float(np.mean(db ** 2) * cm_per_unit ** 2)
    return float(np.mean(da) * cm_per_unit), float(np.mean(db) * cm_per_unit)


def fscore(pred, gt, tau: float) -> float:
    """Harmonic mean of precision and recall at distance threshold ``tau`` (point units)."""
    if not tau > 0:
        raise MetricsError("tau must be positive")
    dp, _ = nearest(pred, gt)
    dg, _ = nearest(gt, pred)
    precision = float(np.mean(dp <= tau))
    recall = float(np.mean(dg <= tau))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def normal_consistency_points(pa, na, pb, nb) -> float:
    """Symmetric mean cosine between normals of nearest-neighbour pairs."""
    na = np.asarray(na, dtype=np.float64)
    nb = np.asarray(nb, dtype=np.float64)
    _, ia = nearest(pa, pb)
    _, ib = nearest(pb, pa)
    ab = np.einsum("ij,ij->i", na, nb[ia])
    ba = np.einsum("ij,ij->i", nb, na[ib])
    return float(0.5 * (ab.mean() + ba.mean()))


def normal_consistency(pred: TriangleMesh, gt: TriangleMesh, n: int = 100000, seed: int = 0) -> float:
    sa = sample_surface(pred, n, seed)
    sb = sample_surface(gt, n, seed)
    return normal_consistency_points(sa.points, sa.normals, sb.points, sb.normals)


def _gray(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    elif a.ndim == 3 and a.shape[2] >= 3:
        a = a[..., :3] @ LUMA
    elif a.ndim != 2:
        raise MetricsError(f"unsupported image shape {a.shape}")
    return a


def ssim(a, b, data_range: float = 1.0, sigma: float = 1.5, radius: int = 5) -> float:
    """Mean structural similarity of two images (RGB is reduced to Rec. 601 luma).

    Gaussian window of ``2 * radius + 1`` taps with ``sigma``; constants
    ``(0.01 L)^2`` and ``(0.03 L)^2``; the mean skips a ``radius``-wide border
    where the window would leave the image.
    """
    x, y = _gray(a), _gray(b)
    if x.shape != y.shape:
        raise MetricsError(f"image sizes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < 2 * radius + 1:
        raise MetricsError(f"images must be at least {2 * radius + 1} pixels on each side")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def blur(z):
        return gaussian_filter(z, sigma, mode="reflect", truncate=radius / sigma)

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    r = radius
    return float(s[r:-r, r:-r].mean())


@dataclass
class MetricsReport:
    cd_p2s: float
    cd_s2p: float
    nc: float
    fscore: float
    icp_rotation: list
    icp_translation: list
    icp_rms: float
    icp_iterations: int
    n_points: int
    tau_cm: float
    cm_per_unit: float
    squared: bool
    seed: int

    def __post_init__(self):
        if self.cd_p2s < 0 or self.cd_s2p < 0:
            raise MetricsError("chamfer distances must be non-negative")
        if not 0.0 <= self.fscore <= 1.0:
            raise MetricsError("f-score must lie in [0, 1]")

    @property
    def cd(self) -> float:
        return 0.5 * (self.cd_p2s + self.cd_s2p)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "MetricsReport":
        return cls.from_dict(json.loads(s))


def evaluate_mesh(pred: TriangleMesh, gt: TriangleMesh, n: int = 100000, tau_cm: float = 1.0,
                  seed: int = 0, cm_per_unit: float = 100.0, squared: bool = False,
                  icp_iterations: int = 100, icp_tol: float = 1e-6, icp_points: int = 20000) -> MetricsReport:
    """Register ``pred`` onto ``gt`` with ICP, then compare ``n`` surface samples of each.

    Both meshes are expected in the same units (``cm_per_unit`` converts
    them to centimetres).  Samples are drawn with the same seed on both.
    """
    if pred.n_faces == 0 or gt.n_faces == 0:
        raise MetricsError("cannot evaluate an empty mesh")
    m = min(n, icp_points)
    ip = sample_surface(pred, m, seed).points
    ig = sample_surface(gt, m, seed).points
    tr = icp_align(ip, ig, icp_iterations, icp_tol)
    aligned = pred.transformed(rotation=tr.rotation, offset=tr.translation)
    sp = sample_surface(aligned, n, seed)
    sg = sample_surface(gt, n, seed)
    cd_p2s, cd_s2p = chamfer(sp.points, sg.points, cm_per_unit, squared)
    nc = normal_consistency_points(sp.points, sp.normals, sg.points, sg.normals)
    f = fscore(sp.points, sg.points, tau_cm / cm_per_unit)
    return MetricsReport(cd_p2s, cd_s2p, nc, f, tr.rotation.tolist(), tr.translation.tolist(), tr.rms,
                         tr.iterations, int(n), float(tau_cm), float(cm_per_unit), bool(squared), int(seed))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_manifest(path) -> list[tuple[str, str]]:
    """CSV rows of ``pred_path,gt_path``; a header row naming those columns is optional.

    Relative paths are taken relative to the manifest's directory.
    """
    base = Path(path).parent
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row]
            if not row or not any(row) or row[0].startswith("#"):
                continue
            if i == 0 and row[:2] == ["pred_path", "gt_path"]:
                continue
            if len(row) < 2:
                raise MetricsError(f"manifest line {i + 1}: expected pred_path,gt_path")
            rows.append(tuple(str(base / c) if not Path(c).is_absolute() else c for c in row[:2]))
    if not rows:
        raise MetricsError("manifest has no entries")
    return rows


def run_eval(cfg) -> dict:
    """Evaluate one pair (``cfg.eval.pred`` / ``gt``) or every manifest row; write the JSON."""
    ec = cfg.eval
    kernels.set_num_threads(cfg.resolved_workers())
    pairs = read_manifest(ec.manifest) if ec.manifest else [(ec.pred, ec.gt)]
    results = []
    for pred_path, gt_path in pairs:
        rep = evaluate_mesh(load_mesh(pred_path), load_mesh(gt_path), ec.n_points, ec.tau_cm, cfg.seed,
                            ec.cm_per_unit, ec.squared, ec.icp_iterations, ec.icp_tol, ec.icp_points)
        entry = {"pred": str(pred_path), "gt": str(gt_path), "pred_sha256": _sha256(pred_path),
                 "gt_sha256": _sha256(gt_path)}
        entry.update(rep.to_dict())
        results.append(entry)
    out = {"version": __version__}
    if ec.manifest:
        out["manifest"] = str(ec.manifest)
        out["manifest_sha256"] = _sha256(ec.manifest)
        out["results"] = results
        keys = ("cd_p2s", "cd_s2p", "nc", "fscore")
        out["mean"] = {k: float(np.mean([r[k] for r in results])) for k in keys}
    else:
        out.update(results[0])
    Path(ec.out).parent.mkdir(parents=True, exist_ok=True)
    Path(ec.out).write_text(json.dumps(out, indent=1, sort_keys=True))
    return out
