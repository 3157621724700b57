# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core. Formula-identical to _pykernels.py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor, sqrt, INFINITY

cnp.import_array()

BACKEND = "compiled"


def im2col(cnp.ndarray x_in, int kh, int kw, int stride, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = (h + 2 * pad - kh) // stride + 1
    cdef int ow = (w + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] cols = np.zeros((n, c * kh * kw, oh * ow))
    cdef int b, ch, ki, kj, oi, oj, ii, jj, row
    for b in range(n):
        for ch in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ch * kh + ki) * kw + kj
                    for oi in range(oh):
                        ii = oi * stride + ki - pad
                        if ii < 0 or ii >= h:
                            continue
                        for oj in range(ow):
                            jj = oj * stride + kj - pad
                            if jj < 0 or jj >= w:
                                continue
                            cols[b, row, oi * ow + oj] = x[b, ch, ii, jj]
    return cols


def col2im(cnp.ndarray cols_in, int n, int c, int h, int w,
           int kh, int kw, int stride, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] cols = np.ascontiguousarray(
        cols_in, dtype=np.float64).reshape(n, c * kh * kw, -1)
    cdef int oh = (h + 2 * pad - kh) // stride + 1
    cdef int ow = (w + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.zeros((n, c, h, w))
    cdef int b, ch, ki, kj, oi, oj, ii, jj, row
    # (ki,kj) outer order matches the fallback's per-element accumulation order
    for b in range(n):
        for ch in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ch * kh + ki) * kw + kj
                    for oi in range(oh):
                        ii = oi * stride + ki - pad
                        if ii < 0 or ii >= h:
                            continue
                        for oj in range(ow):
                            jj = oj * stride + kj - pad
                            if jj < 0 or jj >= w:
                                continue
                            x[b, ch, ii, jj] += cols[b, row, oi * ow + oj]
    return x


def rasterize_tris(cnp.ndarray pix_in, cnp.ndarray tris_in, cnp.ndarray values_in,
                   int height, int width):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pix = np.ascontiguousarray(pix_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] tris = np.ascontiguousarray(tris_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] values = np.ascontiguousarray(values_in, dtype=np.float64)
    cdef int nch = values.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] data = np.zeros((height, width, nch))
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] mask = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] owner = np.full((height, width), -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] interior_flag = np.zeros((height, width), dtype=np.uint8)
    conflicts = []
    cdef double eps_in = 1e-9
    # edge-inclusive coverage tolerance, see _pykernels.rasterize_tris
    cdef double eps_cov = 1e-9
    cdef int t, m = tris.shape[0]
    cdef long i0, i1, i2
    cdef double p0x, p0y, p1x, p1y, p2x, p2y, den, lox, loy, hix, hiy
    cdef double px, py, b0, b1, b2
    cdef int j0, j1, r0, r1, r, j, ch
    cdef bint interior

    for t in range(m):
        i0 = tris[t, 0]; i1 = tris[t, 1]; i2 = tris[t, 2]
        p0x = pix[i0, 0]; p0y = pix[i0, 1]
        p1x = pix[i1, 0]; p1y = pix[i1, 1]
        p2x = pix[i2, 0]; p2y = pix[i2, 1]
        den = (p1x - p0x) * (p2y - p0y) - (p2x - p0x) * (p1y - p0y)
        if den == 0.0:
            continue
        lox = min(min(p0x, p1x), p2x); hix = max(max(p0x, p1x), p2x)
        loy = min(min(p0y, p1y), p2y); hiy = max(max(p0y, p1y), p2y)
        j0 = <int>ceil(lox - eps_cov); j1 = <int>floor(hix + eps_cov)
        r0 = <int>ceil(loy - eps_cov); r1 = <int>floor(hiy + eps_cov)
        if j0 < 0: j0 = 0
        if r0 < 0: r0 = 0
        if j1 > width - 1: j1 = width - 1
        if r1 > height - 1: r1 = height - 1
        for r in range(r0, r1 + 1):
            py = r
            for j in range(j0, j1 + 1):
                px = j
                b1 = ((px - p0x) * (p2y - p0y) - (p2x - p0x) * (py - p0y)) / den
                b2 = ((p1x - p0x) * (py - p0y) - (px - p0x) * (p1y - p0y)) / den
                b0 = 1.0 - b1 - b2
                if b0 < -eps_cov or b1 < -eps_cov or b2 < -eps_cov:
                    continue
                interior = b0 > eps_in and b1 > eps_in and b2 > eps_in
                if mask[r, j]:
                    if interior and interior_flag[r, j]:
                        conflicts.append((r, j, int(owner[r, j]), t))
                    continue
                for ch in range(nch):
                    data[r, j, ch] = (b0 * values[i0, ch] + b1 * values[i1, ch]
                                      + b2 * values[i2, ch])
                mask[r, j] = 1
                owner[r, j] = t
                interior_flag[r, j] = 1 if interior else 0
    return data, mask, owner, conflicts


cdef inline void _closest_on_tri(double px, double py, double pz,
                                 double ax, double ay, double az,
                                 double bx, double by, double bz,
                                 double cx, double cy, double cz,
                                 double* out) nogil:
    # Ericson region cascade; out = (b0, b1, b2)
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    cdef double bpx = px - bx, bpy = py - by, bpz = pz - bz
    cdef double d3 = abx * bpx + aby * bpy + abz * bpz
    cdef double d4 = acx * bpx + acy * bpy + acz * bpz
    cdef double cpx = px - cx, cpy = py - cy, cpz = pz - cz
    cdef double d5 = abx * cpx + aby * cpy + abz * cpz
    cdef double d6 = acx * cpx + acy * cpy + acz * cpz
    cdef double vc = d1 * d4 - d3 * d2
    cdef double vb = d5 * d2 - d1 * d6
    cdef double va = d3 * d6 - d5 * d4
    cdef double v, w, denom
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = 1.0; out[1] = 0.0; out[2] = 0.0
        return
    if d3 >= 0.0 and d4 <= d3:
        out[0] = 0.0; out[1] = 1.0; out[2] = 0.0
        return
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = 1.0 - v; out[1] = v; out[2] = 0.0
        return
    if d6 >= 0.0 and d5 <= d6:
        out[0] = 0.0; out[1] = 0.0; out[2] = 1.0
        return
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = 1.0 - w; out[1] = 0.0; out[2] = w
        return
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = 0.0; out[1] = 1.0 - w; out[2] = w
        return
    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    out[0] = 1.0 - v - w; out[1] = v; out[2] = w


def closest_point_tris(cnp.ndarray queries_in, cnp.ndarray verts_in,
                       cnp.ndarray tris_in, int chunk=64):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] queries = np.ascontiguousarray(queries_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] verts = np.ascontiguousarray(verts_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] tris = np.ascontiguousarray(tris_in, dtype=np.int64)
    cdef int nq = queries.shape[0], m = tris.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(nq, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bary = np.empty((nq, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(nq)
    cdef double bw[3]
    cdef double best_bw[3]
    cdef double px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double qx, qy, qz, dx, dy, dz, d2, best_d2
    cdef long best_t, i0, i1, i2
    cdef int q, t, k
    for q in range(nq):
        px = queries[q, 0]; py = queries[q, 1]; pz = queries[q, 2]
        best_d2 = INFINITY
        best_t = -1
        for t in range(m):
            i0 = tris[t, 0]; i1 = tris[t, 1]; i2 = tris[t, 2]
            ax = verts[i0, 0]; ay = verts[i0, 1]; az = verts[i0, 2]
            bx = verts[i1, 0]; by = verts[i1, 1]; bz = verts[i1, 2]
            cx = verts[i2, 0]; cy = verts[i2, 1]; cz = verts[i2, 2]
            _closest_on_tri(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz, bw)
            qx = bw[0] * ax + bw[1] * bx + bw[2] * cx
            qy = bw[0] * ay + bw[1] * by + bw[2] * cy
            qz = bw[0] * az + bw[1] * bz + bw[2] * cz
            dx = px - qx; dy = py - qy; dz = pz - qz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best_d2:
                best_d2 = d2
                best_t = t
                for k in range(3):
                    best_bw[k] = bw[k]
        idx[q] = best_t
        for k in range(3):
            bary[q, k] = best_bw[k]
        dist[q] = sqrt(best_d2)
    return idx, bary, dist
