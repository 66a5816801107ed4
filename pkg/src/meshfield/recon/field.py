"""Evaluating the trained field on a voxel grid."""

from __future__ import annotations

import numpy as np

from ..embed import BodyPrior, depth_only_embedding
from ..net.model import FieldModel
from ..net.params import ParameterSet
from .mcubes import CORNERS, VoxelGrid, surface_cells


class FieldEvaluator:
    """Everything fixed for one subject: feature maps of both branches and the body prior.

    ``rgb`` and ``mask`` are (2, H, W, 3) / (2, H, W, 1) stacks of the front
    and back views.  ``normals`` (same layout as ``rgb``) replaces the
    normal predictor's output when given.
    """

    def __init__(self, model: FieldModel, params: ParameterSet, rgb, mask, cameras,
                 body: BodyPrior | None = None, normals=None, no_normal_guidance: bool = False):
        self.model, self.params = model, params
        self.cameras = tuple(cameras)
        self.body = body
        dt = params.dtype
        rgb = np.asarray(rgb, dtype=dt)
        mask = np.asarray(mask, dtype=dt)
        if no_normal_guidance:
            geo_in = rgb
        else:
            if normals is None:
                normals, _ = model.predict_normals(params, rgb)
            geo_in = np.asarray(normals, dtype=dt) * mask
        self.normals = None if no_normal_guidance else geo_in
        self.geo = model.encode(params, "geometry", geo_in, self.cameras)
        self.color = model.encode(params, "color", rgb, self.cameras)
        self.geo.cache = self.color.cache = None  # no backward at inference

    def embedding(self, x) -> np.ndarray:
        front, back = self.cameras
        if self.body is None:
            return depth_only_embedding(x, front)
        return self.body.embed(x, front, back, frame=front.rotation)

    def sdf(self, x, chunk: int = 65536) -> np.ndarray:
        return self._eval("geometry", x, chunk)

    def rgb(self, x, chunk: int = 65536) -> np.ndarray:
        return self._eval("color", x, chunk)

    def _eval(self, head, x, chunk):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        feats = self.geo if head == "geometry" else self.color
        out = np.zeros((len(x),) if head == "geometry" else (len(x), 3), dtype=np.float32)
        for i in range(0, len(x), chunk):
            xc = x[i:i + chunk]
            y, _ = self.model.head_forward(self.params, head, feats, xc, self.embedding(xc))
            out[i:i + len(xc)] = y
        return out


def _upsample(v: np.ndarray) -> np.ndarray:
    """Double the lattice resolution along every axis by linear interpolation."""
    for ax in range(3):
        n = v.shape[ax]
        shape = list(v.shape)
        shape[ax] = 2 * n - 1
        out = np.empty(shape, dtype=v.dtype)
        sl_even = [slice(None)] * 3
        sl_odd = [slice(None)] * 3
        sl_even[ax] = slice(0, None, 2)
        sl_odd[ax] = slice(1, None, 2)
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[ax] = slice(0, n - 1)
        b[ax] = slice(1, n)
        out[tuple(sl_even)] = v
        out[tuple(sl_odd)] = 0.5 * (v[tuple(a)] + v[tuple(b)])
        v = out
    return v


def _cell_flags(v: np.ndarray, threshold: float, iso: float = 0.0) -> np.ndarray:
    """Cells with a sign change or a corner closer than ``threshold`` to the iso level."""
    k = v.shape[0] - 1
    lo = np.full((k, k, k), np.inf, dtype=v.dtype)
    hi = np.full((k, k, k), -np.inf, dtype=v.dtype)
    for dx, dy, dz in CORNERS:
        c = v[dx:k + dx, dy:k + dy, dz:k + dz]
        np.minimum(lo, c, out=lo)
        np.maximum(hi, c, out=hi)
    return ((lo <= iso) & (hi > iso)) | (np.minimum(np.abs(lo - iso), np.abs(hi - iso)) < threshold)


def evaluate_field(evaluator: FieldEvaluator, resolution: int = 256, adaptive: bool = True,
                   chunk: int = 65536, coarse_stride: int = 8, margin: float = 1.5,
                   with_rgb: bool = True, stats: dict | None = None) -> VoxelGrid:
    """Sample SDF (and RGB) on the ``resolution^3`` lattice over [-1, 1]^3.

    Adaptive mode starts on a lattice ``coarse_stride`` times coarser and
    halves the spacing repeatedly, evaluating the network only inside cells
    that straddle the zero level or lie within ``margin`` cell diagonals of
    it; elsewhere values are trilinearly interpolated.  Colors are evaluated
    only at corners of cells that cross the surface, the only lattice points
    marching cubes reads them from.
    """
    n = int(resolution)
    if n < 8:
        raise ValueError("resolution must be at least 8")
    h = 2.0 / (n - 1)
    evaluated = 0
    if not adaptive:
        a = np.linspace(-1.0, 1.0, n)
        sdf = np.empty((n, n, n), dtype=np.float32)
        for i in range(n):
            pts = np.stack(np.meshgrid(a[i:i + 1], a, a, indexing="ij"), axis=-1).reshape(-1, 3)
            sdf[i] = evaluator.sdf(pts, chunk).reshape(n, n)
        evaluated = n ** 3
    else:
        s = 1
        while s * 2 <= coarse_stride and s * 2 < n - 1:
            s *= 2
        k = -(-(n - 1) // s)  # the padded lattice may overshoot +1; cropped at the end
        idx = np.arange(k + 1) * s
        pts = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1).reshape(-1, 3)
        v = evaluator.sdf(-1.0 + h * pts, chunk).reshape(k + 1, k + 1, k + 1)
        evaluated += len(pts)
        while s > 1:
            flags = _cell_flags(v, margin * s * h * np.sqrt(3.0))
            fine = _upsample(v)
            kk = fine.shape[0]
            need = np.zeros((kk, kk, kk), dtype=bool)
            for dx in range(3):
                for dy in range(3):
                    for dz in range(3):
                        sub = need[dx:dx + 2 * flags.shape[0]:2, dy:dy + 2 * flags.shape[1]:2,
                                   dz:dz + 2 * flags.shape[2]:2]
                        sub |= flags
            need[::2, ::2, ::2] = False  # already known exactly
            s //= 2
            where = np.nonzero(need)
            if len(where[0]):
                g = np.stack(where, axis=1) * s
                fine[where] = evaluator.sdf(-1.0 + h * g, chunk)
                evaluated += len(g)
            v = fine
        sdf = np.ascontiguousarray(v[:n, :n, :n])
        del v
    rgb = None
    rgb_count = 0
    if with_rgb:
        rgb = np.zeros((n, n, n, 3), dtype=np.float32)
        cross = surface_cells(sdf)
        k = n - 1
        corner = np.zeros((n, n, n), dtype=bool)
        for dx, dy, dz in CORNERS:
            corner[dx:k + dx, dy:k + dy, dz:k + dz] |= cross
        where = np.nonzero(corner)
        rgb_count = len(where[0])
        if rgb_count:
            rgb[where] = evaluator.rgb(-1.0 + h * np.stack(where, axis=1), chunk)
    if stats is not None:
        stats["sdf_evaluations"] = int(evaluated)
        stats["rgb_evaluations"] = int(rgb_count)
    return VoxelGrid(sdf, rgb)
