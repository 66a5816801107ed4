# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled query kernels.

Every routine here has a numpy twin in ``_pykernels`` with the same
signature and the same floating-point operation order, so the two backends
agree to the last bit on the same inputs.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, floor, ceil, INFINITY, fabs

cnp.import_array()

DEF STACK = 128

# region codes returned by the closest-point query
# 0 face interior, 1/2/3 vertex a/b/c, 4 edge ab, 5 edge bc, 6 edge ca


cdef inline double _box_d2(const double* p, const double* lo, const double* hi) noexcept nogil:
    cdef double d2 = 0.0, e
    cdef int k
    for k in range(3):
        if p[k] < lo[k]:
            e = lo[k] - p[k]
            d2 += e * e
        elif p[k] > hi[k]:
            e = p[k] - hi[k]
            d2 += e * e
    return d2


cdef inline double _closest_tri(const double* p, const double* a, const double* b, const double* c,
                                double* q, double* bary, int* region) noexcept nogil:
    cdef double ab0 = b[0] - a[0], ab1 = b[1] - a[1], ab2 = b[2] - a[2]
    cdef double ac0 = c[0] - a[0], ac1 = c[1] - a[1], ac2 = c[2] - a[2]
    cdef double ap0 = p[0] - a[0], ap1 = p[1] - a[1], ap2 = p[2] - a[2]
    cdef double bp0 = p[0] - b[0], bp1 = p[1] - b[1], bp2 = p[2] - b[2]
    cdef double cp0 = p[0] - c[0], cp1 = p[1] - c[1], cp2 = p[2] - c[2]
    cdef double d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    cdef double d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    cdef double d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    cdef double d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    cdef double d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    cdef double d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    cdef double vc = d1 * d4 - d3 * d2
    cdef double vb = d5 * d2 - d1 * d6
    cdef double va = d3 * d6 - d5 * d4
    cdef double v, w, den, e0, e1, e2
    if d1 <= 0.0 and d2 <= 0.0:
        v = 0.0
        w = 0.0
        region[0] = 1
    elif d3 >= 0.0 and d4 <= d3:
        v = 1.0
        w = 0.0
        region[0] = 2
    elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        den = d1 - d3
        v = d1 / den if den != 0.0 else 0.0
        w = 0.0
        region[0] = 4
    elif d6 >= 0.0 and d5 <= d6:
        v = 0.0
        w = 1.0
        region[0] = 3
    elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        den = d2 - d6
        v = 0.0
        w = d2 / den if den != 0.0 else 0.0
        region[0] = 6
    elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / den if den != 0.0 else 0.0
        v = 1.0 - w
        region[0] = 5
    else:
        den = va + vb + vc
        if den != 0.0:
            v = vb / den
            w = vc / den
        else:
            v = 0.0
            w = 0.0
        region[0] = 0
    bary[0] = 1.0 - v - w
    bary[1] = v
    bary[2] = w
    q[0] = a[0] + ab0 * v + ac0 * w
    q[1] = a[1] + ab1 * v + ac1 * w
    q[2] = a[2] + ab2 * v + ac2 * w
    e0 = p[0] - q[0]
    e1 = p[1] - q[1]
    e2 = p[2] - q[2]
    return e0 * e0 + e1 * e1 + e2 * e2


cdef inline bint _ray_box(const double* o, const double* d, const double* lo, const double* hi,
                          double tmin, double tmax, double* tenter) noexcept nogil:
    cdef int k
    cdef double t0, t1, tmp, inv
    for k in range(3):
        if d[k] == 0.0:
            if o[k] < lo[k] or o[k] > hi[k]:
                return False
            continue
        inv = 1.0 / d[k]
        t0 = (lo[k] - o[k]) * inv
        t1 = (hi[k] - o[k]) * inv
        if t0 > t1:
            tmp = t0
            t0 = t1
            t1 = tmp
        if t0 > tmin:
            tmin = t0
        if t1 < tmax:
            tmax = t1
        if tmin > tmax:
            return False
    tenter[0] = tmin
    return True


cdef inline double _ray_tri(const double* o, const double* d, const double* a, const double* b,
                            const double* c, double* uv) noexcept nogil:
    """Moller-Trumbore, double sided.  Returns t or INFINITY on miss."""
    cdef double e10 = b[0] - a[0], e11 = b[1] - a[1], e12 = b[2] - a[2]
    cdef double e20 = c[0] - a[0], e21 = c[1] - a[1], e22 = c[2] - a[2]
    cdef double p0 = d[1] * e22 - d[2] * e21
    cdef double p1 = d[2] * e20 - d[0] * e22
    cdef double p2 = d[0] * e21 - d[1] * e20
    cdef double det = e10 * p0 + e11 * p1 + e12 * p2
    cdef double inv, t0, t1, t2, u, v, q0, q1, q2
    if fabs(det) < 1e-300:
        return INFINITY
    inv = 1.0 / det
    t0 = o[0] - a[0]
    t1 = o[1] - a[1]
    t2 = o[2] - a[2]
    u = (t0 * p0 + t1 * p1 + t2 * p2) * inv
    if u < 0.0 or u > 1.0:
        return INFINITY
    q0 = t1 * e12 - t2 * e11
    q1 = t2 * e10 - t0 * e12
    q2 = t0 * e11 - t1 * e10
    v = (d[0] * q0 + d[1] * q1 + d[2] * q2) * inv
    if v < 0.0 or u + v > 1.0:
        return INFINITY
    uv[0] = u
    uv[1] = v
    return (e20 * q0 + e21 * q1 + e22 * q2) * inv


cdef void _closest_one(const double* p, const double* tris, const double* lo, const double* hi,
                       const int* left, const int* right, const int* start, const int* count,
                       const int* perm, double* out_q, double* out_bary, long* out_face,
                       double* out_d2, signed char* out_region) noexcept nogil:
    cdef int stack[STACK]
    cdef int sp = 1, node, k, f, l, r, reg, best_reg = -1
    cdef long best_f = -1
    cdef double best = INFINITY, d2, dl, dr
    cdef double q[3]
    cdef double bary[3]
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_d2(p, lo + 3 * node, hi + 3 * node) > best * (1.0 + 1e-12):
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                f = perm[k]
                d2 = _closest_tri(p, tris + 9 * f, tris + 9 * f + 3, tris + 9 * f + 6, q, bary, &reg)
                if d2 < best or (d2 == best and f < best_f):
                    best = d2
                    best_f = f
                    best_reg = reg
                    out_q[0] = q[0]
                    out_q[1] = q[1]
                    out_q[2] = q[2]
                    out_bary[0] = bary[0]
                    out_bary[1] = bary[1]
                    out_bary[2] = bary[2]
        else:
            l = left[node]
            r = right[node]
            dl = _box_d2(p, lo + 3 * l, hi + 3 * l)
            dr = _box_d2(p, lo + 3 * r, hi + 3 * r)
            if dl <= dr:
                stack[sp] = r
                stack[sp + 1] = l
            else:
                stack[sp] = l
                stack[sp + 1] = r
            sp += 2
    out_face[0] = best_f
    out_d2[0] = best
    out_region[0] = best_reg


def closest_points(const double[:, :, ::1] tris, const double[:, ::1] lo, const double[:, ::1] hi,
                   const int[::1] left, const int[::1] right, const int[::1] start,
                   const int[::1] count, const int[::1] perm, const double[:, ::1] queries,
                   int n_threads=1):
    cdef Py_ssize_t n = queries.shape[0], i
    out_q = np.empty((n, 3), dtype=np.float64)
    out_b = np.empty((n, 3), dtype=np.float64)
    out_f = np.empty(n, dtype=np.int64)
    out_d2 = np.empty(n, dtype=np.float64)
    out_r = np.empty(n, dtype=np.int8)
    cdef double[:, ::1] vq = out_q
    cdef double[:, ::1] vb = out_b
    cdef long[::1] vf = out_f
    cdef double[::1] vd = out_d2
    cdef signed char[::1] vr = out_r
    if n == 0:
        return out_q, out_f, out_b, out_d2, out_r
    if n_threads < 1:
        n_threads = 1
    for i in prange(n, nogil=True, num_threads=n_threads, schedule="static"):
        _closest_one(&queries[i, 0], &tris[0, 0, 0], &lo[0, 0], &hi[0, 0], &left[0], &right[0],
                     &start[0], &count[0], &perm[0], &vq[i, 0], &vb[i, 0], &vf[i], &vd[i], &vr[i])
    return out_q, out_f, out_b, out_d2, out_r


cdef void _ray_one(const double* o, const double* d, double tmin, double tmax, bint any_hit,
                   const double* tris, const double* lo, const double* hi,
                   const int* left, const int* right, const int* start, const int* count,
                   const int* perm, double* out_t, long* out_face, double* out_bary) noexcept nogil:
    cdef int stack[STACK]
    cdef int sp = 1, node, k, f, l, r
    cdef bint hl, hr
    cdef long best_f = -1
    cdef double best = tmax, t, te, tl = 0.0, tr = 0.0
    cdef double uv[2]
    cdef double bu = 0.0, bv = 0.0
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _ray_box(o, d, lo + 3 * node, hi + 3 * node, tmin, best, &te):
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                f = perm[k]
                t = _ray_tri(o, d, tris + 9 * f, tris + 9 * f + 3, tris + 9 * f + 6, uv)
                if t > tmin and (t < best or (t == best and f < best_f)):
                    best = t
                    best_f = f
                    bu = uv[0]
                    bv = uv[1]
                    if any_hit:
                        sp = 0
                        break
        else:
            l = left[node]
            r = right[node]
            hl = _ray_box(o, d, lo + 3 * l, hi + 3 * l, tmin, best, &tl)
            hr = _ray_box(o, d, lo + 3 * r, hi + 3 * r, tmin, best, &tr)
            if hl and hr:
                if tl <= tr:
                    stack[sp] = r
                    stack[sp + 1] = l
                else:
                    stack[sp] = l
                    stack[sp + 1] = r
                sp += 2
            elif hl:
                stack[sp] = l
                sp += 1
            elif hr:
                stack[sp] = r
                sp += 1
    if best_f >= 0:
        out_t[0] = best
        out_face[0] = best_f
        out_bary[0] = 1.0 - bu - bv
        out_bary[1] = bu
        out_bary[2] = bv
    else:
        out_t[0] = INFINITY
        out_face[0] = -1
        out_bary[0] = 0.0
        out_bary[1] = 0.0
        out_bary[2] = 0.0


def raycast(const double[:, :, ::1] tris, const double[:, ::1] lo, const double[:, ::1] hi,
            const int[::1] left, const int[::1] right, const int[::1] start,
            const int[::1] count, const int[::1] perm, const double[:, ::1] origins,
            const double[:, ::1] dirs, double tmin, double tmax, bint any_hit=False,
            int n_threads=1):
    cdef Py_ssize_t n = origins.shape[0], i
    out_t = np.empty(n, dtype=np.float64)
    out_f = np.empty(n, dtype=np.int64)
    out_b = np.empty((n, 3), dtype=np.float64)
    cdef double[::1] vt = out_t
    cdef long[::1] vf = out_f
    cdef double[:, ::1] vb = out_b
    if n == 0:
        return out_t, out_f, out_b
    if n_threads < 1:
        n_threads = 1
    for i in prange(n, nogil=True, num_threads=n_threads, schedule="static"):
        _ray_one(&origins[i, 0], &dirs[i, 0], tmin, tmax, any_hit, &tris[0, 0, 0], &lo[0, 0],
                 &hi[0, 0], &left[0], &right[0], &start[0], &count[0], &perm[0],
                 &vt[i], &vf[i], &vb[i, 0])
    return out_t, out_f, out_b


cdef void _raster_rows(const double[:, ::1] sv, const long[:, ::1] faces, int row0, int row1, int W,
                       int[:, ::1] fid, double[:, ::1] depth, double[:, :, ::1] bary) noexcept nogil:
    cdef Py_ssize_t f, nf = faces.shape[0]
    cdef long i0, i1, i2
    cdef double u0, v0, z0, u1, v1, z1, u2, v2, z2, area, w0, w1, w2, z, pu, pv
    cdef double umin, umax, vmin, vmax
    cdef int jlo, jhi, ilo, ihi, i, j
    for f in range(nf):
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        u0 = sv[i0, 0]; v0 = sv[i0, 1]; z0 = sv[i0, 2]
        u1 = sv[i1, 0]; v1 = sv[i1, 1]; z1 = sv[i1, 2]
        u2 = sv[i2, 0]; v2 = sv[i2, 1]; z2 = sv[i2, 2]
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if not (fabs(area) > 1e-20):
            continue
        umin = min(u0, min(u1, u2))
        umax = max(u0, max(u1, u2))
        vmin = min(v0, min(v1, v2))
        vmax = max(v0, max(v1, v2))
        if umax < 0.0 or vmax < row0 or umin > W - 1 or vmin > row1 - 1:
            continue
        jlo = <int>max(ceil(umin), 0.0)
        jhi = <int>min(floor(umax), <double>(W - 1))
        ilo = <int>max(ceil(vmin), <double>row0)
        ihi = <int>min(floor(vmax), <double>(row1 - 1))
        for i in range(ilo, ihi + 1):
            pv = <double>i
            for j in range(jlo, jhi + 1):
                pu = <double>j
                w0 = ((u2 - u1) * (pv - v1) - (v2 - v1) * (pu - u1)) / area
                if w0 < 0.0:
                    continue
                w1 = ((u0 - u2) * (pv - v2) - (v0 - v2) * (pu - u2)) / area
                if w1 < 0.0:
                    continue
                w2 = ((u1 - u0) * (pv - v0) - (v1 - v0) * (pu - u0)) / area
                if w2 < 0.0:
                    continue
                z = w0 * z0 + w1 * z1 + w2 * z2
                if z < depth[i, j]:
                    depth[i, j] = z
                    fid[i, j] = <int>f
                    bary[i, j, 0] = w0
                    bary[i, j, 1] = w1
                    bary[i, j, 2] = w2


def rasterize(const double[:, ::1] screen_verts, const long[:, ::1] faces, int height, int width,
              int n_threads=1):
    """Hard z-buffer visibility pass.

    ``screen_verts`` holds (u, v, depth) per vertex with pixel centers at
    integer coordinates.  Returns (face_id, depth, barycentric); smaller
    depth wins and equal depths keep the lower face index.
    """
    face_id = np.full((height, width), -1, dtype=np.int32)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    cdef int[:, ::1] vf = face_id
    cdef double[:, ::1] vd = depth
    cdef double[:, :, ::1] vb = bary
    cdef int tile = 16
    cdef int n_tiles = (height + tile - 1) // tile, t
    if n_threads < 1:
        n_threads = 1
    for t in prange(n_tiles, nogil=True, num_threads=n_threads, schedule="static"):
        _raster_rows(screen_verts, faces, t * tile, min((t + 1) * tile, height), width, vf, vd, vb)
    return face_id, depth, bary
