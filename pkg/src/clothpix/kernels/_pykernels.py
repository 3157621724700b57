"""Pure numpy implementations of the hot kernels.

These are the fallback backend used when the compiled extension is not
available. Each function is formula-identical to its Cython counterpart in
``_ckernels.pyx`` so that both backends agree to floating-point roundoff;
``tests/test_kernels.py`` checks the two against each other.
"""

import numpy as np

BACKEND = "python"


def im2col(x, kh, kw, stride, pad):
    """Unfold (N,C,H,W) into (N, C*kh*kw, oh*ow) patch columns."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad > 0:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride,
                                    kj:kj + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    """Scatter-add inverse of :func:`im2col`; returns (N,C,H,W)."""
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    # fixed (ki,kj) accumulation order keeps sums deterministic
    for ki in range(kh):
        for kj in range(kw):
            xp[:, :, ki:ki + stride * oh:stride,
               kj:kj + stride * ow:stride] += cols[:, :, ki, kj]
    if pad > 0:
        return xp[:, :, pad:pad + h, pad:pad + w].copy()
    return xp


def rasterize_tris(pix, tris, values, height, width):
    """Rasterize triangles over pixel centers at integer grid coordinates.

    pix: (n,2) float64 vertex positions in pixel-center coordinates, where
    pixel (row i, col j) has center (x=j, y=i). values: (n,C). Triangles are
    processed in index order and the first write to a pixel wins.

    Returns (data (H,W,C), mask (H,W) uint8, owner (H,W) int32, conflicts)
    where conflicts lists (row, col, old_tri, new_tri) pixels claimed as
    strictly interior by two triangles.
    """
    nch = values.shape[1]
    data = np.zeros((height, width, nch), dtype=np.float64)
    mask = np.zeros((height, width), dtype=np.uint8)
    owner = np.full((height, width), -1, dtype=np.int32)
    interior_flag = np.zeros((height, width), dtype=np.uint8)
    conflicts = []
    eps_in = 1e-9
    # edge-inclusive coverage: pixel centers that land exactly on a triangle
    # edge or vertex round to barycentric coordinates a few ulp below zero,
    # and the bounding box of such a triangle rounds a few ulp past the
    # integer column/row, so both tests get a small symmetric tolerance
    eps_cov = 1e-9

    for t in range(len(tris)):
        i0, i1, i2 = tris[t]
        p0, p1, p2 = pix[i0], pix[i1], pix[i2]
        den = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if den == 0.0:
            continue
        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        j0 = max(int(np.ceil(lo[0] - eps_cov)), 0)
        j1 = min(int(np.floor(hi[0] + eps_cov)), width - 1)
        r0 = max(int(np.ceil(lo[1] - eps_cov)), 0)
        r1 = min(int(np.floor(hi[1] + eps_cov)), height - 1)
        if j1 < j0 or r1 < r0:
            continue
        jj, rr = np.meshgrid(np.arange(j0, j1 + 1), np.arange(r0, r1 + 1))
        px = jj.astype(np.float64)
        py = rr.astype(np.float64)
        b1 = ((px - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (py - p0[1])) / den
        b2 = ((p1[0] - p0[0]) * (py - p0[1]) - (px - p0[0]) * (p1[1] - p0[1])) / den
        b0 = 1.0 - b1 - b2
        inside = (b0 >= -eps_cov) & (b1 >= -eps_cov) & (b2 >= -eps_cov)
        if not inside.any():
            continue
        interior = (b0 > eps_in) & (b1 > eps_in) & (b2 > eps_in)
        ri = rr[inside]
        ji = jj[inside]
        already = mask[ri, ji] != 0
        clash = already & interior[inside] & (interior_flag[ri, ji] != 0)
        for r, j in zip(ri[clash], ji[clash]):
            conflicts.append((int(r), int(j), int(owner[r, j]), t))
        new = ~already
        rn, jn = ri[new], ji[new]
        w0 = b0[inside][new]
        w1 = b1[inside][new]
        w2 = b2[inside][new]
        data[rn, jn] = (w0[:, None] * values[i0] + w1[:, None] * values[i1]
                        + w2[:, None] * values[i2])
        mask[rn, jn] = 1
        owner[rn, jn] = t
        interior_flag[rn, jn] = interior[inside][new]
    return data, mask, owner, conflicts


def _closest_on_tri_batch(p, a, b, c):
    """Closest point on triangles (a,b,c) to point p, vectorized over axis 0.

    Returns (points, bary). Region cascade follows Ericson's real-time
    collision detection construction; the branch order here must match the
    scalar version in the compiled backend.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    conds = [
        (d1 <= 0.0) & (d2 <= 0.0),
        (d3 >= 0.0) & (d4 <= d3),
        (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0),
        (d6 >= 0.0) & (d5 <= d6),
        (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0),
        (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0),
    ]
    bary = np.empty_like(p)
    zeros = np.zeros(len(p))
    ones = np.ones(len(p))
    b0 = np.select(conds, [ones, zeros, 1.0 - v_ab, zeros, 1.0 - w_ac, zeros],
                   default=1.0 - v_in - w_in)
    b1 = np.select(conds, [zeros, ones, v_ab, zeros, zeros, 1.0 - w_bc],
                   default=v_in)
    b2 = np.select(conds, [zeros, zeros, zeros, ones, w_ac, w_bc],
                   default=w_in)
    bary[:, 0] = b0
    bary[:, 1] = b1
    bary[:, 2] = b2
    pt = bary[:, [0]] * a + bary[:, [1]] * b + bary[:, [2]] * c
    return pt, bary


def closest_point_tris(queries, verts, tris, chunk=64):
    """Closest point on a triangle soup for each query point.

    Returns (tri_idx (q,), bary (q,3), dist (q,)). Exact scan over all
    triangles; ties resolved to the lowest triangle index.
    """
    nq = len(queries)
    m = len(tris)
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    idx = np.empty(nq, dtype=np.int64)
    bary = np.empty((nq, 3), dtype=np.float64)
    dist = np.empty(nq, dtype=np.float64)
    for s in range(0, nq, chunk):
        q = queries[s:s + chunk]
        k = len(q)
        pq = np.repeat(q, m, axis=0)
        pa = np.tile(a, (k, 1))
        pb = np.tile(b, (k, 1))
        pc = np.tile(c, (k, 1))
        pts, bw = _closest_on_tri_batch(pq, pa, pb, pc)
        d2 = np.einsum("ij,ij->i", pq - pts, pq - pts).reshape(k, m)
        best = np.argmin(d2, axis=1)
        rows = np.arange(k) * m + best
        idx[s:s + chunk] = best
        bary[s:s + chunk] = bw[rows]
        dist[s:s + chunk] = np.sqrt(d2.reshape(-1)[rows])
    return idx, bary, dist
