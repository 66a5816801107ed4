"""Fitting the body mesh to a silhouette and 2D joints by scale and offset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..mesh import TriangleMesh
from ..raster import MultiChannelImage, OrthoCamera, project, rasterize


class AlignmentError(ValueError):
    pass


@dataclass
class AlignmentResult:
    """The fitted transform ``v' = scale * v + offset`` and the final fit quality."""

    scale: float
    offset: np.ndarray
    iou: float
    joint_error: float  # confidence-weighted mean, in mask pixels
    objective: float = 0.0
    evaluations: int = 0
    restarts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.scale > 0:
            raise AlignmentError("alignment scale must be positive")
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)

    def apply(self, mesh: TriangleMesh) -> TriangleMesh:
        return mesh.transformed(scale=self.scale, offset=self.offset)

    def to_dict(self) -> dict:
        return {"scale": float(self.scale), "offset": [float(v) for v in self.offset],
                "iou": float(self.iou), "joint_error": float(self.joint_error),
                "objective": float(self.objective), "evaluations": int(self.evaluations),
                "restarts": self.restarts}


def parse_joints(joints) -> np.ndarray:
    """Accept ``[{u, v, confidence}]``, ``[((u, v), c)]`` or a (J, 3) array; return (J, 3)."""
    if isinstance(joints, np.ndarray):
        out = np.asarray(joints, dtype=np.float64)
    else:
        rows = []
        for j in joints:
            if isinstance(j, dict):
                rows.append((j["u"], j["v"], j.get("confidence", 1.0)))
            elif len(j) == 2:
                (u, v), c = j
                rows.append((u, v, c))
            else:
                rows.append(tuple(j))
        out = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    if out.ndim != 2 or out.shape[1] != 3:
        raise AlignmentError("joints must be (u, v, confidence) triples")
    return out


def _mask_array(mask) -> np.ndarray:
    if isinstance(mask, MultiChannelImage):
        mask = mask["alpha"] if "alpha" in mask else mask[mask.names[0]]
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m[..., 0]
    return m > 0.5


def _resample_mask(m: np.ndarray, size: int) -> np.ndarray:
    """Nearest-pixel resampling onto a ``size`` x ``size`` grid with the same view square."""
    h, w = m.shape
    rows = np.clip(np.floor((np.arange(size) + 0.5) * h / size).astype(int), 0, h - 1)
    cols = np.clip(np.floor((np.arange(size) + 0.5) * w / size).astype(int), 0, w - 1)
    return m[np.ix_(rows, cols)]


def silhouette_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


class _Objective:
    def __init__(self, body, mask, joints, camera, regressor, w_s, w_j, resolution):
        self.body = body
        self.camera = camera
        self.cam_small = camera.with_size(resolution, resolution)
        self.mask = _resample_mask(mask, resolution)
        self.center = body.vertices.mean(axis=0)
        r = camera.rotation
        self.right, self.up = r[0].copy(), r[1].copy()
        self.conf = joints[:, 2]
        self.target = joints[:, :2]
        self.body_joints = np.stack([body.vertices[np.asarray(ix)].mean(axis=0) for ix in regressor]) \
            if len(joints) else np.zeros((0, 3))
        self.w_s, self.w_j = float(w_s), float(w_j)
        self.calls = 0

    def transform(self, theta):
        """Parameters (log scale, right offset, up offset) -> (scale, world offset)."""
        s = float(np.exp(theta[0]))
        o = self.center * (1.0 - s) + theta[1] * self.right + theta[2] * self.up
        return s, o

    def joint_error(self, s, o) -> float:
        if not len(self.conf) or self.conf.sum() <= 0:
            return 0.0
        u, v, _ = project(self.camera, s * self.body_joints + o)
        e = np.hypot(u - self.target[:, 0], v - self.target[:, 1])
        return float((self.conf * e).sum() / self.conf.sum())

    def iou(self, s, o) -> float:
        fid, _, _ = rasterize(self.cam_small, self.body.transformed(scale=s, offset=o))
        return silhouette_iou(fid >= 0, self.mask)

    def __call__(self, theta) -> float:
        self.calls += 1
        s, o = self.transform(theta)
        val = 0.0
        if self.w_s:
            val += self.w_s * (1.0 - self.iou(s, o))
        if self.w_j:
            val += self.w_j * self.joint_error(s, o)
        return val

    def initial_guess(self, mask_full: np.ndarray) -> np.ndarray:
        """Closed-form start: weighted least squares on joints, else bounding-box matching."""
        cam = self.camera
        px = 2.0 * cam.span / cam.width  # world units per pixel (square pixels assumed)
        if len(self.conf) >= 2 and np.count_nonzero(self.conf > 0) >= 2:
            # target pixel = project(s * (J - c) + c + a*right + b*up), linear in (s, a, b)
            uc, vc, _ = project(cam, self.center)
            uj, vj, _ = project(cam, self.body_joints)
            w = np.sqrt(self.conf)
            a = np.zeros((2 * len(w), 3))
            rhs = np.zeros(2 * len(w))
            a[0::2, 0] = (uj - uc) * w
            a[0::2, 1] = w / px
            a[1::2, 0] = (vj - vc) * w
            a[1::2, 2] = -w / (2.0 * cam.span / cam.height)
            rhs[0::2] = (self.target[:, 0] - uc) * w
            rhs[1::2] = (self.target[:, 1] - vc) * w
            (s, da, db), *_ = np.linalg.lstsq(a, rhs, rcond=None)
            if s > 0:
                return np.array([np.log(s), da, db])
        rows, cols = np.nonzero(mask_full)
        u, v, _ = project(cam, self.body.vertices)
        mh = rows.max() - rows.min() + 1
        bh = v.max() - v.min() + 1
        s = mh / bh
        # centers in pixels -> offsets in world units after scaling about the centroid
        uc, vc, _ = project(cam, self.center)
        mu, mv = 0.5 * (cols.min() + cols.max()), 0.5 * (rows.min() + rows.max())
        bu, bv = 0.5 * (u.min() + u.max()), 0.5 * (v.min() + v.max())
        a = (mu - (uc + s * (bu - uc))) * px
        b = -(mv - (vc + s * (bv - vc))) * (2.0 * cam.span / cam.height)
        return np.array([np.log(s), a, b])


def align_body(body: TriangleMesh, mask, joints2d, camera: OrthoCamera, joint_regressor,
               iterations: int = 200, restarts: int = 3, w_s: float = 1.0, w_j: float = 0.01,
               resolution: int = 256, seed: int = 0) -> AlignmentResult:
    """Fit scale and in-plane offset of ``body`` to a silhouette and 2D joints.

    Minimizes ``w_s * (1 - IoU) + w_j * joint error`` with Nelder-Mead, run
    once from a closed-form start and ``restarts - 1`` more times from
    jittered copies of it; the best result wins.  The offset along the
    viewing direction does not change an orthographic image and stays 0
    relative to the scaling centre (the body centroid).
    """
    m = _mask_array(mask)
    if m.shape != (camera.height, camera.width):
        raise AlignmentError(f"mask is {m.shape[1]}x{m.shape[0]}, camera expects {camera.width}x{camera.height}")
    if not m.any():
        raise AlignmentError("mask has zero area")
    joints = parse_joints(joints2d) if joints2d is not None and len(joints2d) else np.zeros((0, 3))
    if np.count_nonzero(joints[:, 2] > 0) < 4:
        raise AlignmentError("alignment needs at least 4 joints with positive confidence")
    if len(joint_regressor) != len(joints):
        raise AlignmentError(f"{len(joints)} joints but the regressor defines {len(joint_regressor)}")
    if restarts < 1 or iterations < 1:
        raise AlignmentError("iterations and restarts must be positive")

    f = _Objective(body, m, joints, camera, joint_regressor, w_s, w_j, resolution)
    x0 = f.initial_guess(m)
    rng = np.random.default_rng(seed)
    steps = np.array([0.02, 0.02, 0.02])
    best, log = None, []
    for r in range(restarts):
        start = x0 if r == 0 else x0 + rng.uniform(-1.0, 1.0, 3) * steps * 2.0
        simplex = np.vstack([start, start + np.diag(steps)])
        res = minimize(f, start, method="Nelder-Mead",
                       options={"maxiter": iterations, "initial_simplex": simplex,
                                "xatol": 1e-5, "fatol": 1e-7})
        log.append({"start": start.tolist(), "objective": float(res.fun), "iterations": int(res.nit)})
        if best is None or res.fun < best.fun:
            best = res
    s, o = f.transform(best.x)
    return AlignmentResult(s, o, f.iou(s, o), f.joint_error(s, o), float(best.fun), f.calls, log)
