"""Pixel-aligned feature querying and the body-mesh positional embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bvh import RAY_EPS, build_bvh
from .mesh import MeshError, TriangleMesh
from .raster import OrthoCamera, project

EMBED_DIM = 7  # d_c, n_c (3), u_c (2), v_c


@dataclass
class FeatureMap:
    """H' x W' x D feature grid computed from an image seen by ``camera``."""

    data: np.ndarray
    camera: OrthoCamera

    @property
    def shape(self):
        return self.data.shape

    def texel_coords(self, u, v):
        """Image pixel coordinates -> continuous texel coordinates of this map."""
        h, w = self.data.shape[:2]
        fu = (np.asarray(u, dtype=np.float64) + 0.5) * (w / self.camera.width) - 0.5
        fv = (np.asarray(v, dtype=np.float64) + 0.5) * (h / self.camera.height) - 0.5
        return fu, fv


def bilinear_taps(fu, fv, height: int, width: int):
    """Flat texel indices (n, 4) and weights (n, 4) of the bilinear blend.

    Coordinates outside the grid are clamped to the border texels.
    """
    fu = np.clip(np.asarray(fu, dtype=np.float64).ravel(), 0.0, width - 1.0)
    fv = np.clip(np.asarray(fv, dtype=np.float64).ravel(), 0.0, height - 1.0)
    x0 = np.minimum(np.floor(fu), max(width - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(fv), max(height - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    ax = fu - x0
    ay = fv - y0
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1)
    w = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=1)
    return idx, w


def bilinear_matrix(fu, fv, height: int, width: int) -> sp.csr_matrix:
    """Sparse (n, H*W) interpolation operator; its transpose scatters gradients back."""
    idx, w = bilinear_taps(fu, fv, height, width)
    n = idx.shape[0]
    rows = np.repeat(np.arange(n), 4)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, height * width))


def sample_bilinear(data: np.ndarray, fu, fv) -> np.ndarray:
    """Blend of the four neighbouring texels at texel coordinates (fu, fv)."""
    h, w, d = data.shape
    idx, wt = bilinear_taps(fu, fv, h, w)
    flat = data.reshape(h * w, d)
    out = np.zeros((idx.shape[0], d), dtype=np.result_type(data.dtype, np.float32))
    for k in range(4):
        out += wt[:, k:k + 1].astype(out.dtype) * flat[idx[:, k]]
    return out


def query_bilinear(fm: FeatureMap, u, v) -> np.ndarray:
    """Features at image pixel coordinates (u, v); a single pair returns a D-vector."""
    scalar = np.ndim(u) == 0
    fu, fv = fm.texel_coords(u, v)
    out = sample_bilinear(fm.data, np.atleast_1d(fu), np.atleast_1d(fv))
    return out[0] if scalar else out


def query_points(fm: FeatureMap, x) -> np.ndarray:
    """Features at the orthographic projections of world points."""
    u, v, _ = project(fm.camera, x)
    return query_bilinear(fm, u, v)


# ---------------------------------------------------------------- body prior

@dataclass
class PositionalEmbedding:
    d_c: float
    n_c: np.ndarray
    u_c: np.ndarray
    v_c: int

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.d_c], self.n_c, self.u_c, [self.v_c]])


class BodyPrior:
    """Body mesh with UVs, its BVH, and the embedding computation."""

    def __init__(self, mesh: TriangleMesh, sign_method: str = "auto"):
        if mesh.uvs is None:
            raise MeshError("body mesh has no per-vertex UVs")
        self.mesh = mesh
        self.bvh = build_bvh(mesh)
        self.sign_method = sign_method

    def embed(self, x, front: OrthoCamera, back: OrthoCamera, frame: np.ndarray | None = None) -> np.ndarray:
        """(n, 7) rows ``[d_c, n_c, u_c, v_c]``.

        ``n_c = x - x_c*`` is expressed in world axes unless ``frame`` (a
        rotation) is given, in which case it is rotated into that frame.
        """
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        d, cp = self.bvh.signed_distance_full(x, self.sign_method)
        n_c = x - cp.point
        if frame is not None:
            n_c = n_c @ np.asarray(frame).T
        uv = np.einsum("nk,nkd->nd", cp.barycentric, self.mesh.uvs[self.mesh.faces[cp.face]])
        vis = self.visibility(cp.point, front, back)
        return np.concatenate([d[:, None], n_c, uv, vis[:, None]], axis=1)

    def visibility(self, anchors, front: OrthoCamera, back: OrthoCamera) -> np.ndarray:
        """1 if the anchor is unoccluded toward the front camera, -1 toward the back, else 0."""
        anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 3)
        occ_f = self.bvh.occluded(anchors, -front.view_dir, tmin=RAY_EPS)
        vis = np.where(~occ_f, 1.0, 0.0)
        rest = occ_f
        if rest.any():
            occ_b = self.bvh.occluded(anchors[rest], -back.view_dir, tmin=RAY_EPS)
            vis[np.nonzero(rest)[0][~occ_b]] = -1.0
        return vis


def embed_point(body: BodyPrior, x, front: OrthoCamera, back: OrthoCamera) -> PositionalEmbedding:
    row = body.embed(np.asarray(x).reshape(1, 3), front, back)[0]
    return PositionalEmbedding(float(row[0]), row[1:4], row[4:6], int(row[6]))


def depth_only_embedding(x, front: OrthoCamera) -> np.ndarray:
    """Embedding used when the body prior is switched off.

    All body terms are zero; the first slot carries the point's depth along
    the front camera so the field is not constant along camera rays.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    p = np.zeros((len(x), EMBED_DIM))
    p[:, 0] = x @ front.view_dir
    return p
