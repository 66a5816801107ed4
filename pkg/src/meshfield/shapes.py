"""Closed primitive meshes (outward-facing, counter-clockwise winding)."""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh


def box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    v = lo + corners * (hi - lo)
    # corner index = 4x + 2y + z
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x = lo
        [4, 6, 7], [4, 7, 5],  # x = hi
        [0, 4, 5], [0, 5, 1],  # y = lo
        [2, 3, 7], [2, 7, 6],  # y = hi
        [0, 2, 6], [0, 6, 4],  # z = lo
        [1, 5, 7], [1, 7, 3],  # z = hi
    ])
    return TriangleMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.reshape(-1, 3) + len(v)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
        ])
        v = np.concatenate([v, mid])
    normals = v.copy()
    return TriangleMesh(v * radius + np.asarray(center, dtype=np.float64), f, normals=normals)


def icosphere_chord_error(subdivisions: int, radius: float = 1.0) -> float:
    """Upper bound on the radial gap between the sphere and its icosphere mesh."""
    m = icosphere(subdivisions, radius)
    tri = m.triangles()
    # the worst gap is at a face's circumcenter-ish point; the centroid bound is tight enough
    e = np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1).max()
    # distance from sphere to a chord plane of circumradius e/sqrt(3)
    rc = e / np.sqrt(3.0)
    return float(radius - np.sqrt(max(radius * radius - rc * rc, 0.0)))


def cylinder(radius: float = 0.2, height: float = 1.0, segments: int = 32, center=(0.0, 0.0, 0.0),
             axis: int = 1) -> TriangleMesh:
    """Closed cylinder along ``axis``, capped with fans."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = height / 2.0
    bottom = np.column_stack([ring[:, 0], np.full(segments, -h), ring[:, 1]])
    top = np.column_stack([ring[:, 0], np.full(segments, h), ring[:, 1]])
    v = np.concatenate([bottom, top, [[0, -h, 0], [0, h, 0]]])
    nb, nt = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f += [[i, segments + j, j], [i, segments + i, segments + j]]
        f += [[nb, i, j], [nt, segments + j, segments + i]]
    v = v.copy()
    perm = {0: [1, 0, 2], 1: [0, 1, 2], 2: [0, 2, 1]}[axis]
    v = v[:, perm]
    f = np.asarray(f, dtype=np.int64)
    if axis != 1:
        f = f[:, [0, 2, 1]]
    return TriangleMesh(v + np.asarray(center, dtype=np.float64), f)


def concat(*meshes: TriangleMesh) -> TriangleMesh:
    vs, fs, off = [], [], 0
    for m in meshes:
        vs.append(m.vertices)
        fs.append(m.faces + off)
        off += m.n_vertices
    return TriangleMesh(np.concatenate(vs), np.concatenate(fs))


def quad(z: float = 0.0, lo=(-0.5, -0.5), hi=(0.5, 0.5)) -> TriangleMesh:
    """Axis-aligned square in the plane ``z``, normal +z."""
    v = np.array([[lo[0], lo[1], z], [hi[0], lo[1], z], [hi[0], hi[1], z], [lo[0], hi[1], z]])
    return TriangleMesh(v, [[0, 1, 2], [0, 2, 3]])
