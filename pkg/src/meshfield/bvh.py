"""Bounding-volume hierarchy and exact geometric queries over a triangle mesh.

Closest point, signed distance, raycast and occlusion.  The hierarchy is
built here in numpy; traversal runs in the backend chosen by
:mod:`meshfield.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .mesh import MeshError, TriangleMesh

LEAF_SIZE = 4
RAY_EPS = 1e-6
_MAX_SAH_DEPTH = 40


@dataclass
class ClosestPointResult:
    """Closest point(s) on the mesh.  Arrays are batched; scalars for a single query."""

    point: np.ndarray
    face: np.ndarray
    barycentric: np.ndarray
    distance: np.ndarray
    region: np.ndarray


@dataclass
class RayHit:
    t: float
    face: int
    barycentric: np.ndarray


class BVH:
    """Immutable hierarchy over ``mesh``; safe to query from many threads."""

    def __init__(self, mesh: TriangleMesh, lo, hi, left, right, start, count, perm):
        self.mesh = mesh
        self.tris = np.ascontiguousarray(mesh.triangles(), dtype=np.float64)
        self.lo = lo
        self.hi = hi
        self.left = left
        self.right = right
        self.start = start
        self.count = count
        self.perm = perm
        self._pseudo = None
        self._closed = None

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def leaves(self) -> np.ndarray:
        return np.nonzero(self.left < 0)[0]

    def _args(self):
        return (self.tris, self.lo, self.hi, self.left, self.right, self.start, self.count, self.perm)

    # -- closest point ----------------------------------------------------

    def closest_points(self, points, backend: str | None = None) -> ClosestPointResult:
        q = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        k = kernels.get_backend(backend)
        pts, face, bary, d2, region = k.closest_points(*self._args(), q, kernels.num_threads())
        return ClosestPointResult(pts, face, bary, np.sqrt(d2), region)

    def signed_distance(self, points, method: str = "auto", backend: str | None = None) -> np.ndarray:
        return self.signed_distance_full(points, method, backend)[0]

    def signed_distance_full(self, points, method: str = "auto", backend: str | None = None):
        """Return (signed distance, ClosestPointResult).

        ``method``: ``"pseudonormal"`` (angle-weighted pseudonormal at the
        closest feature), ``"winding"`` (generalized winding number > 1/2 is
        inside) or ``"auto"`` (pseudonormal on closed meshes, winding
        otherwise).
        """
        q = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cp = self.closest_points(q, backend)
        if method == "auto":
            method = "pseudonormal" if self.is_closed() else "winding"
        if method == "pseudonormal":
            pn = self.pseudonormals()[cp.face, cp.region]
            side = np.einsum("ij,ij->i", q - cp.point, pn)
            sign = np.where(side < 0.0, -1.0, 1.0)
        elif method == "winding":
            sign = np.where(winding_number(self.mesh, q) > 0.5, -1.0, 1.0)
        else:
            raise ValueError(f"unknown sign method {method!r}")
        return sign * cp.distance, cp

    def is_closed(self) -> bool:
        if self._closed is None:
            self._closed = self.mesh.is_closed()
        return self._closed

    def pseudonormals(self) -> np.ndarray:
        """(F, 7, 3) normal per closest-feature region code of each face."""
        if self._pseudo is None:
            self._pseudo = _pseudonormal_table(self.mesh)
        return self._pseudo

    # -- rays ---------------------------------------------------------------

    def raycast(self, origins, dirs, tmin: float = RAY_EPS, tmax: float = np.inf,
                backend: str | None = None):
        o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
        d = np.ascontiguousarray(np.broadcast_to(np.asarray(dirs, dtype=np.float64).reshape(-1, 3), o.shape))
        k = kernels.get_backend(backend)
        return k.raycast(*self._args(), o, d, float(tmin), float(tmax), False, kernels.num_threads())

    def occluded(self, origins, dirs, tmin: float = RAY_EPS, tmax: float = np.inf,
                 backend: str | None = None) -> np.ndarray:
        o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
        d = np.ascontiguousarray(np.broadcast_to(np.asarray(dirs, dtype=np.float64).reshape(-1, 3), o.shape))
        k = kernels.get_backend(backend)
        _, face, _ = k.raycast(*self._args(), o, d, float(tmin), float(tmax), True, kernels.num_threads())
        return face >= 0


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> BVH:
    """Surface-area-heuristic split along the widest centroid axis; median split
    when the centroids coincide or the tree gets deep."""
    if mesh.n_faces == 0:
        raise MeshError("empty geometry")
    tri = mesh.triangles()
    tlo = tri.min(axis=1)
    thi = tri.max(axis=1)
    cen = (tlo + thi) * 0.5
    order = np.arange(mesh.n_faces, dtype=np.int64)

    los, his, lefts, rights, starts, counts = [], [], [], [], [], []

    def new_node(b, e):
        idx = order[b:e]
        los.append(tlo[idx].min(axis=0))
        his.append(thi[idx].max(axis=0))
        lefts.append(-1)
        rights.append(-1)
        starts.append(b)
        counts.append(e - b)
        return len(lefts) - 1

    root = new_node(0, mesh.n_faces)
    stack = [(root, 0, mesh.n_faces, 0)]
    while stack:
        node, b, e, depth = stack.pop()
        n = e - b
        if n <= leaf_size:
            continue
        idx = order[b:e]
        c = cen[idx]
        ext = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(ext))
        srt = np.argsort(c[:, axis], kind="stable")
        idx = idx[srt]
        if ext[axis] <= 0.0 or depth >= _MAX_SAH_DEPTH:
            split = n // 2
        else:
            split = _sah_split(tlo[idx], thi[idx])
        order[b:e] = idx
        m = b + split
        l = new_node(b, m)
        r = new_node(m, e)
        lefts[node] = l
        rights[node] = r
        counts[node] = 0
        stack.append((r, m, e, depth + 1))
        stack.append((l, b, m, depth + 1))

    lo = np.asarray(los, dtype=np.float64)
    hi = np.asarray(his, dtype=np.float64)
    scale = max(1.0, float(np.abs(tri).max()))
    pad = 1e-9 * scale
    lo -= pad
    hi += pad
    i32 = lambda a: np.ascontiguousarray(a, dtype=np.int32)
    return BVH(mesh, np.ascontiguousarray(lo), np.ascontiguousarray(hi), i32(lefts), i32(rights),
               i32(starts), i32(counts), i32(order))


def _sah_split(lo: np.ndarray, hi: np.ndarray) -> int:
    """Best split position (1..n-1) for boxes already sorted along the split axis."""
    n = len(lo)

    def areas(l, h):
        d = h - l
        return d[:, 0] * d[:, 1] + d[:, 1] * d[:, 2] + d[:, 2] * d[:, 0]

    pl = areas(np.minimum.accumulate(lo, axis=0), np.maximum.accumulate(hi, axis=0))
    sl = areas(np.minimum.accumulate(lo[::-1], axis=0)[::-1], np.maximum.accumulate(hi[::-1], axis=0)[::-1])
    k = np.arange(1, n)
    cost = pl[:-1] * k + sl[1:] * (n - k)
    return int(np.argmin(cost)) + 1


def _pseudonormal_table(mesh: TriangleMesh) -> np.ndarray:
    F = mesh.n_faces
    fn = mesh.face_normals()
    tri = mesh.triangles()
    table = np.zeros((F, 7, 3))
    table[:, 0] = fn

    # vertex pseudonormals: incident face normals weighted by the corner angle
    vn = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        e1 = tri[:, (k + 1) % 3] - tri[:, k]
        e2 = tri[:, (k + 2) % 3] - tri[:, k]
        cosang = np.einsum("ij,ij->i", e1, e2) / np.maximum(
            np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(vn, mesh.faces[:, k], ang[:, None] * fn)
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
    for k in range(3):
        table[:, 1 + k] = vn[mesh.faces[:, k]]

    # edge pseudonormals: sum of the normals of the faces sharing the edge
    a = mesh.faces[:, [0, 1, 2]].ravel()
    b = mesh.faces[:, [1, 2, 0]].ravel()
    key = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    en = np.zeros((inv.max() + 1, 3))
    np.add.at(en, inv, np.repeat(fn, 3, axis=0))
    en /= np.maximum(np.linalg.norm(en, axis=1, keepdims=True), 1e-300)
    table[:, 4:7] = en[inv].reshape(F, 3, 3)
    return table


def winding_number(mesh: TriangleMesh, points, chunk: int = 1 << 21) -> np.ndarray:
    """Generalized winding number (solid-angle sum over 4 pi) at each point."""
    q = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles()
    out = np.zeros(len(q))
    step = max(1, chunk // max(len(tri), 1))
    for s in range(0, len(q), step):
        p = q[s:s + step]
        a = tri[None, :, 0] - p[:, None]
        b = tri[None, :, 1] - p[:, None]
        c = tri[None, :, 2] - p[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
        det = np.einsum("qfi,qfi->qf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("qfi,qfi->qf", a, b) * lc
               + np.einsum("qfi,qfi->qf", b, c) * la + np.einsum("qfi,qfi->qf", c, a) * lb)
        out[s:s + step] = np.arctan2(det, den).sum(axis=1) / (2.0 * np.pi)
    return out


# -- single-query conveniences --------------------------------------------

def closest_point(bvh: BVH, x) -> ClosestPointResult:
    r = bvh.closest_points(np.asarray(x, dtype=np.float64).reshape(1, 3))
    return ClosestPointResult(r.point[0], int(r.face[0]), r.barycentric[0], float(r.distance[0]), int(r.region[0]))


def signed_distance(bvh: BVH, x, method: str = "auto"):
    """Signed distance to the mesh; negative inside.  Accepts one point or (n, 3)."""
    x = np.asarray(x, dtype=np.float64)
    d = bvh.signed_distance(x.reshape(-1, 3), method)
    return float(d[0]) if x.ndim == 1 else d


def raycast(bvh: BVH, origin, direction, tmin: float = RAY_EPS, tmax: float = np.inf) -> Optional[RayHit]:
    """Nearest intersection with ``t > tmin``; None on a miss."""
    t, f, b = bvh.raycast(np.asarray(origin).reshape(1, 3), np.asarray(direction).reshape(1, 3), tmin, tmax)
    if f[0] < 0:
        return None
    return RayHit(float(t[0]), int(f[0]), b[0])
