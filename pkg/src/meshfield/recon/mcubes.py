"""Marching cubes over a dense voxel grid.

The 256-entry case table is derived at import time instead of being typed
in: on every cube face the crossing edges are paired with a fixed rule
(ambiguous faces keep their inside corners separated), the oriented face
segments are chained into loops, and each loop is fanned into triangles.
Because the rule only looks at the four values of a face, neighbouring
cells always agree on the shared face and the extracted surface has no
cracks.  Grid values equal to the iso level count as inside.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..mesh import TriangleMesh

# corner c sits at offset CORNERS[c] = (dx, dy, dz) from the cell origin
CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
])
EDGES = np.array([
    [0, 1], [1, 2], [2, 3], [3, 0],
    [4, 5], [5, 6], [6, 7], [7, 4],
    [0, 4], [1, 5], [2, 6], [3, 7],
])
# cyclic corner order per face and the face's outward normal
_FACES = [
    ([0, 1, 2, 3], (0, 0, -1)),
    ([4, 5, 6, 7], (0, 0, 1)),
    ([0, 1, 5, 4], (0, -1, 0)),
    ([3, 2, 6, 7], (0, 1, 0)),
    ([0, 3, 7, 4], (-1, 0, 0)),
    ([1, 2, 6, 5], (1, 0, 0)),
]


def _edge_index(a: int, b: int) -> int:
    for i, (p, q) in enumerate(EDGES):
        if (p, q) in ((a, b), (b, a)):
            return i
    raise KeyError((a, b))


_MID = (CORNERS[EDGES[:, 0]] + CORNERS[EDGES[:, 1]]) / 2.0


def _case_loops(case: int) -> list[list[int]]:
    inside = [(case >> c) & 1 for c in range(8)]
    nxt: dict[int, int] = {}
    for corners, normal in _FACES:
        m = np.asarray(normal, dtype=np.float64)
        s = [inside[c] for c in corners]
        crossing = [k for k in range(4) if s[k] != s[(k + 1) % 4]]
        if not crossing:
            continue
        fe = [_edge_index(corners[k], corners[(k + 1) % 4]) for k in range(4)]
        segs = []  # (edge, edge, reference inside corner)
        if len(crossing) == 2:
            ref = next(c for c, si in zip(corners, s) if si)
            segs.append((fe[crossing[0]], fe[crossing[1]], ref))
        else:
            for k in range(4):
                if s[k]:
                    # the two face edges touching inside corner k
                    segs.append((fe[(k - 1) % 4], fe[k], corners[k]))
        for e0, e1, ref in segs:
            p, q = _MID[e0], _MID[e1]
            if np.dot(np.cross(q - p, CORNERS[ref] - p), m) < 0:
                e0, e1 = e1, e0
            if e0 in nxt:
                raise AssertionError(f"inconsistent segment orientation in case {case}")
            nxt[e0] = e1
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        loops.append(loop)
    return loops


def _edge_faces(e: int) -> set[int]:
    a, b = EDGES[e]
    return {f for f, (corners, _) in enumerate(_FACES) if a in corners and b in corners}


def _best_rotation(loop: list[int]) -> list[int]:
    """Rotate the loop so that no fan diagonal lies in a cube face, when possible.

    A diagonal inside a face can coincide with the neighbour cell's
    triangulation and make a non-manifold edge.
    """
    k = len(loop)
    for r in range(k):
        cand = loop[r:] + loop[:r]
        if all(not (_edge_faces(cand[0]) & _edge_faces(cand[i])) for i in range(2, k - 1)):
            return cand
    return loop


@lru_cache(maxsize=1)
def case_table() -> np.ndarray:
    """(256, K) table of edge indices, three per triangle, padded with -1."""
    tris_per_case = []
    for case in range(256):
        tris = []
        for loop in _case_loops(case):
            loop = _best_rotation(loop)
            for i in range(1, len(loop) - 1):
                tris.append((loop[0], loop[i], loop[i + 1]))
        tris_per_case.append(tris)
    # orient so that triangle normals point from inside (low values) to outside
    t = tris_per_case[1][0]  # only corner 0 inside
    n = np.cross(_MID[t[1]] - _MID[t[0]], _MID[t[2]] - _MID[t[0]])
    flip = np.dot(n, np.ones(3)) < 0
    width = 3 * max(len(t) for t in tris_per_case)
    table = np.full((256, width), -1, dtype=np.int64)
    for case, tris in enumerate(tris_per_case):
        flat = [e for tri in tris for e in (tri[::-1] if flip else tri)]
        table[case, :len(flat)] = flat
    return table


@dataclass
class VoxelGrid:
    """Samples of (sdf, rgb) at the ``N^3`` lattice points spanning ``[lo, hi]^3``."""

    sdf: np.ndarray
    rgb: np.ndarray | None = None
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        self.sdf = np.asarray(self.sdf)
        n = self.sdf.shape[0]
        if self.sdf.shape != (n, n, n) or n < 2:
            raise ValueError("sdf must be an N x N x N array")
        if self.rgb is not None:
            self.rgb = np.asarray(self.rgb)
            if self.rgb.shape != (n, n, n, 3):
                raise ValueError("rgb must be N x N x N x 3")

    @property
    def resolution(self) -> int:
        return self.sdf.shape[0]

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.resolution - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.resolution)

    def points(self) -> np.ndarray:
        a = self.axis()
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)

    def is_finite(self) -> bool:
        ok = bool(np.isfinite(self.sdf).all())
        return ok and (self.rgb is None or bool(np.isfinite(self.rgb).all()))


def grid_points(n: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    a = np.linspace(lo, hi, n)
    return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)


def marching_cubes(grid: VoxelGrid, iso: float = 0.0, slab: int = 32) -> TriangleMesh:
    """Extract the ``iso`` level set; vertex colors interpolate ``grid.rgb`` when present.

    An all-inside or all-outside grid yields an empty mesh.
    """
    if not np.isfinite(grid.sdf).all():
        raise ValueError("grid contains non-finite values")
    table = case_table()
    v = np.asarray(grid.sdf, dtype=np.float64)
    n = grid.resolution
    inside = v <= iso
    edge_ids = []
    for i0 in range(0, n - 1, slab):
        i1 = min(i0 + slab, n - 1)
        idx = np.zeros((i1 - i0, n - 1, n - 1), dtype=np.int64)
        for c, (dx, dy, dz) in enumerate(CORNERS):
            idx |= inside[i0 + dx:i1 + dx, dy:n - 1 + dy, dz:n - 1 + dz].astype(np.int64) << c
        act = np.nonzero((idx != 0) & (idx != 255))
        if len(act[0]) == 0:
            continue
        cases = idx[act]
        ci = np.stack([act[0] + i0, act[1], act[2]], axis=1)
        local = table[cases]
        valid = local >= 0
        cell = np.repeat(np.arange(len(cases)), valid.sum(axis=1))
        e = local[valid]
        a, b = EDGES[e, 0], EDGES[e, 1]
        start = np.minimum(CORNERS[a], CORNERS[b])
        axis = np.argmax(CORNERS[b] != CORNERS[a], axis=1)
        g = ci[cell] + start
        edge_ids.append(((g[:, 0] * n + g[:, 1]) * n + g[:, 2]) * 3 + axis)
    if not edge_ids:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                            colors=np.zeros((0, 3)) if grid.rgb is not None else None)
    ids = np.concatenate(edge_ids)
    uniq, inv = np.unique(ids, return_inverse=True)
    faces = inv.reshape(-1, 3)

    axis = uniq % 3
    p = uniq // 3
    gi, gj, gk = p // (n * n), (p // n) % n, p % n
    step = np.eye(3, dtype=np.int64)[axis]
    g0 = np.stack([gi, gj, gk], axis=1)
    g1 = g0 + step
    v0 = v[g0[:, 0], g0[:, 1], g0[:, 2]]
    v1 = v[g1[:, 0], g1[:, 1], g1[:, 2]]
    t = (iso - v0) / (v1 - v0)
    h = grid.spacing
    pos = grid.lo + h * (g0 + t[:, None] * step)
    colors = None
    if grid.rgb is not None:
        c0 = grid.rgb[g0[:, 0], g0[:, 1], g0[:, 2]].astype(np.float64)
        c1 = grid.rgb[g1[:, 0], g1[:, 1], g1[:, 2]].astype(np.float64)
        colors = np.clip((1.0 - t)[:, None] * c0 + t[:, None] * c1, 0.0, 1.0)
    if (t == 0.0).any():
        # values exactly at the iso level put several edge vertices on one lattice point
        pos, first, weld = np.unique(pos, axis=0, return_index=True, return_inverse=True)
        weld = weld.ravel()
        faces = weld[faces]
        if colors is not None:
            colors = colors[first]
        faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 2] != faces[:, 0])]
    return TriangleMesh(pos, faces, colors=colors)


def surface_cells(sdf: np.ndarray, iso: float = 0.0) -> np.ndarray:
    """Boolean (N-1)^3 mask of cells whose corners straddle ``iso``."""
    inside = sdf <= iso
    n = sdf.shape[0]
    lo = np.ones((n - 1,) * 3, dtype=bool)
    hi = np.zeros((n - 1,) * 3, dtype=bool)
    for dx, dy, dz in CORNERS:
        s = inside[dx:n - 1 + dx, dy:n - 1 + dy, dz:n - 1 + dz]
        lo &= s
        hi |= s
    return hi & ~lo
