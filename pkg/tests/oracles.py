"""Slow, obviously-correct reference implementations used as test oracles."""

import numpy as np


def point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300), 0, 1)
    q = a + t[:, None] * ab
    return np.linalg.norm(p - q, axis=1)


def point_triangle_distances(p, tris):
    """Distance from one point ``p`` to every triangle in ``tris`` (T, 3, 3).

    Plane projection when the foot lies inside the triangle, else the
    nearest of the three edges.
    """
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    h = np.einsum("ij,ij->i", p - a, n)
    foot = p - h[:, None] * n
    # inside test by signs of sub-triangle normals
    s0 = np.einsum("ij,ij->i", np.cross(b - a, foot - a), n)
    s1 = np.einsum("ij,ij->i", np.cross(c - b, foot - b), n)
    s2 = np.einsum("ij,ij->i", np.cross(a - c, foot - c), n)
    inside = (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
    pp = np.broadcast_to(p, a.shape)
    edge = np.minimum(np.minimum(point_segment_distance(pp, a, b), point_segment_distance(pp, b, c)),
                      point_segment_distance(pp, c, a))
    return np.where(inside, np.abs(h), edge)


def brute_closest_distance(points, tris):
    return np.array([point_triangle_distances(p, tris).min() for p in np.asarray(points)])


def brute_raycast(origin, direction, tris, tmin=1e-6):
    """Nearest Moller-Trumbore hit over all triangles: (t, face) or (inf, -1)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = b - a, c - a
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origin - a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    q = np.cross(tvec, e1)
    v = np.einsum("j,ij->i", direction, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > tmin)
    if not hit.any():
        return np.inf, -1
    t = np.where(hit, t, np.inf)
    f = int(np.argmin(t))
    return float(t[f]), f


def brute_nearest(a, b):
    """Nearest distances from each row of ``a`` to the set ``b``, checking every pair."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.array([np.sqrt(((b - p) ** 2).sum(axis=1)).min() for p in a])


def brute_chamfer(a, b, cm_per_unit=100.0):
    return brute_nearest(a, b).mean() * cm_per_unit, brute_nearest(b, a).mean() * cm_per_unit


def brute_fscore(a, b, tau):
    p = (brute_nearest(a, b) <= tau).mean()
    r = (brute_nearest(b, a) <= tau).mean()
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def random_triangles(n, seed=0, scale=0.1):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1, 1, (n, 1, 3))
    return centers + rng.normal(scale=scale, size=(n, 3, 3))


def central_gradient(f, x, h):
    """Central-difference gradient of a batched scalar field."""
    g = np.zeros_like(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[:, k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def brute_inside(points, tris, direction=(0.5377, 0.3261, 0.7774)):
    """Inside test by crossing parity along one generic direction, triangle by triangle."""
    d = np.asarray(direction, dtype=np.float64)
    d /= np.linalg.norm(d)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = b - a, c - a
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    out = []
    for p in np.asarray(points, dtype=np.float64):
        tvec = p - a
        u = np.einsum("ij,ij->i", tvec, pvec) / det
        q = np.cross(tvec, e1)
        v = (q @ d) / det
        t = np.einsum("ij,ij->i", e2, q) / det
        out.append(int(np.count_nonzero((u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0))) % 2 == 1)
    return np.array(out)
