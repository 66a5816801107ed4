"""Pure numpy implementations of the compiled query kernels.

Same signatures and floating-point operation order as ``_kernels.pyx``.
Queries are batched and culled against BVH leaves instead of walking the
tree per point, which is what numpy is good at.
"""

from __future__ import annotations

import numpy as np

_PAIR_BUDGET = 1 << 22


def _leaf_table(left, start, count, perm):
    leaves = np.nonzero(np.asarray(left) < 0)[0]
    cnt = np.asarray(count)[leaves]
    width = max(int(cnt.max()), 1) if len(cnt) else 1
    table = np.full((len(leaves), width), -1, dtype=np.int64)
    st = np.asarray(start)[leaves]
    perm = np.asarray(perm)
    for k in range(width):
        ok = k < cnt
        table[ok, k] = perm[st[ok] + k]
    return leaves, table


def _box_d2(p, lo, hi):
    # p: (..., 3); lo/hi broadcastable.  Same accumulation order as the C version.
    d2 = np.zeros(np.broadcast_shapes(p.shape, lo.shape)[:-1])
    for k in range(3):
        pk, lk, hk = p[..., k], lo[..., k], hi[..., k]
        below = pk < lk
        above = pk > hk
        e = np.where(below, lk - pk, np.where(above, pk - hk, 0.0))
        d2 = d2 + np.where(below | above, e * e, 0.0)
    return d2


def closest_on_triangles(p, a, b, c):
    """Vectorized closest point on triangles (a, b, c) to points p, all (n, 3).

    Returns (q, bary, d2, region) with the region codes of the C kernel.
    """
    ab0, ab1, ab2 = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1], b[:, 2] - a[:, 2]
    ac0, ac1, ac2 = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1], c[:, 2] - a[:, 2]
    ap0, ap1, ap2 = p[:, 0] - a[:, 0], p[:, 1] - a[:, 1], p[:, 2] - a[:, 2]
    bp0, bp1, bp2 = p[:, 0] - b[:, 0], p[:, 1] - b[:, 1], p[:, 2] - b[:, 2]
    cp0, cp1, cp2 = p[:, 0] - c[:, 0], p[:, 1] - c[:, 1], p[:, 2] - c[:, 2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = len(p)
    v = np.zeros(n)
    w = np.zeros(n)
    region = np.zeros(n, dtype=np.int8)
    todo = np.ones(n, dtype=bool)

    def take(cond):
        m = todo & cond
        todo[m] = False
        return m

    with np.errstate(divide="ignore", invalid="ignore"):
        m = take((d1 <= 0.0) & (d2 <= 0.0))
        region[m] = 1
        m = take((d3 >= 0.0) & (d4 <= d3))
        v[m] = 1.0
        region[m] = 2
        m = take((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0))
        den = (d1 - d3)[m]
        v[m] = np.where(den != 0.0, d1[m] / den, 0.0)
        region[m] = 4
        m = take((d6 >= 0.0) & (d5 <= d6))
        w[m] = 1.0
        region[m] = 3
        m = take((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0))
        den = (d2 - d6)[m]
        w[m] = np.where(den != 0.0, d2[m] / den, 0.0)
        region[m] = 6
        m = take((va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0))
        den = ((d4 - d3) + (d5 - d6))[m]
        ww = np.where(den != 0.0, (d4 - d3)[m] / den, 0.0)
        w[m] = ww
        v[m] = 1.0 - ww
        region[m] = 5
        m = todo
        den = (va + vb + vc)[m]
        ok = den != 0.0
        v[m] = np.where(ok, vb[m] / den, 0.0)
        w[m] = np.where(ok, vc[m] / den, 0.0)
        region[m] = 0

    bary = np.stack([1.0 - v - w, v, w], axis=1)
    q = np.stack([a[:, 0] + ab0 * v + ac0 * w, a[:, 1] + ab1 * v + ac1 * w, a[:, 2] + ab2 * v + ac2 * w], axis=1)
    e0, e1, e2 = p[:, 0] - q[:, 0], p[:, 1] - q[:, 1], p[:, 2] - q[:, 2]
    return q, bary, e0 * e0 + e1 * e1 + e2 * e2, region


def _argmin_per_query(qi, key, face, n):
    """Index into the pair arrays of the best pair per query: smallest key, then lowest face."""
    order = np.lexsort((face, key, qi))
    first = np.ones(len(order), dtype=bool)
    first[1:] = qi[order][1:] != qi[order][:-1]
    sel = order[first]
    out = np.full(n, -1, dtype=np.int64)
    out[qi[sel]] = sel
    return out


def closest_points(tris, lo, hi, left, right, start, count, perm, queries, n_threads=1):
    tris = np.asarray(tris, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = len(queries)
    out_q = np.empty((n, 3))
    out_b = np.empty((n, 3))
    out_f = np.empty(n, dtype=np.int64)
    out_d2 = np.empty(n)
    out_r = np.empty(n, dtype=np.int8)
    if n == 0:
        return out_q, out_f, out_b, out_d2, out_r
    leaves, table = _leaf_table(left, start, count, perm)
    llo, lhi = np.asarray(lo)[leaves], np.asarray(hi)[leaves]
    chunk = max(1, _PAIR_BUDGET // max(len(leaves), 1))
    for s in range(0, n, chunk):
        p = queries[s:s + chunk]
        m = len(p)
        bd = _box_d2(p[:, None, :], llo[None], lhi[None])
        # upper bound from the triangles of the nearest leaf box
        near = np.argmin(bd, axis=1)
        cand_f = table[near]
        rows = np.repeat(np.arange(m), table.shape[1])
        ff = cand_f.ravel()
        ok = ff >= 0
        rows, ff = rows[ok], ff[ok]
        _, _, d2, _ = closest_on_triangles(p[rows], tris[ff, 0], tris[ff, 1], tris[ff, 2])
        ub = np.full(m, np.inf)
        np.minimum.at(ub, rows, d2)
        qi, li = np.nonzero(bd <= ub[:, None] * (1.0 + 1e-12))
        ff = table[li].ravel()
        qi = np.repeat(qi, table.shape[1])
        ok = ff >= 0
        qi, ff = qi[ok], ff[ok]
        q, bary, d2, reg = closest_on_triangles(p[qi], tris[ff, 0], tris[ff, 1], tris[ff, 2])
        best = _argmin_per_query(qi, d2, ff, m)
        out_q[s:s + m] = q[best]
        out_b[s:s + m] = bary[best]
        out_f[s:s + m] = ff[best]
        out_d2[s:s + m] = d2[best]
        out_r[s:s + m] = reg[best]
    return out_q, out_f, out_b, out_d2, out_r


def _ray_box(o, d, lo, hi, tmin, tmax):
    """Slab test for pairs; returns hit mask.  o, d: (n, 3); lo, hi: (n, 3)."""
    n = len(o)
    t_lo = np.full(n, float(tmin))
    t_hi = np.broadcast_to(np.asarray(tmax, dtype=np.float64), (n,)).copy()
    hit = np.ones(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            dk = d[:, k]
            par = dk == 0.0
            hit &= ~(par & ((o[:, k] < lo[:, k]) | (o[:, k] > hi[:, k])))
            inv = 1.0 / np.where(par, 1.0, dk)
            t0 = (lo[:, k] - o[:, k]) * inv
            t1 = (hi[:, k] - o[:, k]) * inv
            a = np.minimum(t0, t1)
            b = np.maximum(t0, t1)
            t_lo = np.where(par, t_lo, np.where(a > t_lo, a, t_lo))
            t_hi = np.where(par, t_hi, np.where(b < t_hi, b, t_hi))
    return hit & ~(t_lo > t_hi)


def ray_triangles(o, d, a, b, c):
    """Vectorized double-sided Moller-Trumbore.  Returns (t, u, v); t = inf on miss."""
    e10, e11, e12 = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1], b[:, 2] - a[:, 2]
    e20, e21, e22 = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1], c[:, 2] - a[:, 2]
    p0 = d[:, 1] * e22 - d[:, 2] * e21
    p1 = d[:, 2] * e20 - d[:, 0] * e22
    p2 = d[:, 0] * e21 - d[:, 1] * e20
    det = e10 * p0 + e11 * p1 + e12 * p2
    ok = np.abs(det) >= 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(ok, det, 1.0)
        t0, t1, t2 = o[:, 0] - a[:, 0], o[:, 1] - a[:, 1], o[:, 2] - a[:, 2]
        u = (t0 * p0 + t1 * p1 + t2 * p2) * inv
        ok &= ~((u < 0.0) | (u > 1.0))
        q0 = t1 * e12 - t2 * e11
        q1 = t2 * e10 - t0 * e12
        q2 = t0 * e11 - t1 * e10
        v = (d[:, 0] * q0 + d[:, 1] * q1 + d[:, 2] * q2) * inv
        ok &= ~((v < 0.0) | (u + v > 1.0))
        t = (e20 * q0 + e21 * q1 + e22 * q2) * inv
    return np.where(ok, t, np.inf), u, v


def raycast(tris, lo, hi, left, right, start, count, perm, origins, dirs, tmin, tmax,
            any_hit=False, n_threads=1):
    tris = np.asarray(tris, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(origins)
    out_t = np.full(n, np.inf)
    out_f = np.full(n, -1, dtype=np.int64)
    out_b = np.zeros((n, 3))
    if n == 0:
        return out_t, out_f, out_b
    leaves, table = _leaf_table(left, start, count, perm)
    llo, lhi = np.asarray(lo)[leaves], np.asarray(hi)[leaves]
    L = len(leaves)
    chunk = max(1, _PAIR_BUDGET // max(L, 1))
    for s in range(0, n, chunk):
        o, d = origins[s:s + chunk], dirs[s:s + chunk]
        m = len(o)
        qi = np.repeat(np.arange(m), L)
        li = np.tile(np.arange(L), m)
        hit = _ray_box(o[qi], d[qi], llo[li], lhi[li], tmin, tmax)
        qi, li = qi[hit], li[hit]
        ff = table[li].ravel()
        qi = np.repeat(qi, table.shape[1])
        ok = ff >= 0
        qi, ff = qi[ok], ff[ok]
        t, u, v = ray_triangles(o[qi], d[qi], tris[ff, 0], tris[ff, 1], tris[ff, 2])
        good = (t > tmin) & (t < tmax)
        qi, ff, t, u, v = qi[good], ff[good], t[good], u[good], v[good]
        if any_hit:
            # any occluder will do; report the lowest face index among hits
            key = np.zeros_like(t)
        else:
            key = t
        best = _argmin_per_query(qi, key, ff, m)
        has = best >= 0
        b = best[has]
        out_t[s:s + m][has] = t[b]
        out_f[s:s + m][has] = ff[b]
        out_b[s:s + m][has] = np.stack([1.0 - u[b] - v[b], u[b], v[b]], axis=1)
    return out_t, out_f, out_b


def rasterize(screen_verts, faces, height, width, n_threads=1):
    sv = np.asarray(screen_verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    face_id = np.full((height, width), -1, dtype=np.int32)
    depth = np.full((height, width), np.inf)
    bary = np.zeros((height, width, 3))
    tri = sv[faces]
    u0, v0, z0 = tri[:, 0, 0], tri[:, 0, 1], tri[:, 0, 2]
    u1, v1, z1 = tri[:, 1, 0], tri[:, 1, 1], tri[:, 1, 2]
    u2, v2, z2 = tri[:, 2, 0], tri[:, 2, 1], tri[:, 2, 2]
    area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
    umin = np.minimum(u0, np.minimum(u1, u2))
    umax = np.maximum(u0, np.maximum(u1, u2))
    vmin = np.minimum(v0, np.minimum(v1, v2))
    vmax = np.maximum(v0, np.maximum(v1, v2))
    live = (np.abs(area) > 1e-20) & ~(umax < 0) & ~(vmax < 0) & ~(umin > width - 1) & ~(vmin > height - 1)
    with np.errstate(invalid="ignore"):
        jlo = np.maximum(np.ceil(umin), 0.0)
        jhi = np.minimum(np.floor(umax), width - 1.0)
        ilo = np.maximum(np.ceil(vmin), 0.0)
        ihi = np.minimum(np.floor(vmax), height - 1.0)
    for f in np.nonzero(live)[0]:
        i0, i1, j0, j1 = int(ilo[f]), int(ihi[f]), int(jlo[f]), int(jhi[f])
        if i1 < i0 or j1 < j0:
            continue
        pv = np.arange(i0, i1 + 1, dtype=np.float64)[:, None]
        pu = np.arange(j0, j1 + 1, dtype=np.float64)[None, :]
        a = area[f]
        w0 = ((u2[f] - u1[f]) * (pv - v1[f]) - (v2[f] - v1[f]) * (pu - u1[f])) / a
        w1 = ((u0[f] - u2[f]) * (pv - v2[f]) - (v0[f] - v2[f]) * (pu - u2[f])) / a
        w2 = ((u1[f] - u0[f]) * (pv - v0[f]) - (v1[f] - v0[f]) * (pu - u0[f])) / a
        z = w0 * z0[f] + w1 * z1[f] + w2 * z2[f]
        win = depth[i0:i1 + 1, j0:j1 + 1]
        upd = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0) & (z < win)
        if not upd.any():
            continue
        win[upd] = z[upd]
        face_id[i0:i1 + 1, j0:j1 + 1][upd] = f
        bw = bary[i0:i1 + 1, j0:j1 + 1]
        bw[upd, 0] = w0[upd]
        bw[upd, 1] = w1[upd]
        bw[upd, 2] = w2[upd]
    return face_id, depth, bary
