"""Cage segmentation, harmonic patch bases, and cage curve reconstruction.

The cage is a set of closed UV polylines on the garment. Snapping them to
mesh vertices splits each chart into patches; each patch gets a harmonic
basis (one interior influence function per boundary vertex) so boundary
perturbations can be carried smoothly into the interior.
"""

import hashlib
import json
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.interpolate
import scipy.sparse
import scipy.sparse.linalg

from .blobio import read_blob, write_blob


@dataclass
class Patch:
    interior: np.ndarray   # vertex indices, sorted
    boundary: np.ndarray   # cage vertex indices, sorted


@dataclass
class CageGraph:
    cage_vertices: np.ndarray
    loops: List[np.ndarray]          # snapped vertex cycles, one per polyline
    patches: List[Patch]


def _snap_loop(mesh, polyline, samples_per_segment=24):
    """Snap a closed UV polyline to mesh vertices, ordered and deduplicated."""
    pts = np.asarray(polyline, dtype=np.float64)
    chain = []
    for i in range(len(pts)):
        a = pts[i]
        b = pts[(i + 1) % len(pts)]
        for s in np.linspace(0.0, 1.0, samples_per_segment, endpoint=False):
            q = a + s * (b - a)
            d = np.linalg.norm(mesh.uv - q, axis=1)
            chain.append(int(d.argmin()))
    dedup = [chain[0]]
    for v in chain[1:]:
        if v != dedup[-1]:
            dedup.append(v)
    if dedup[-1] == dedup[0] and len(dedup) > 1:
        dedup.pop()
    return np.asarray(dedup, dtype=np.int64)


def _edge_set(mesh):
    return {(int(a), int(b)) for a, b in mesh.edges}


def _is_edge(es, a, b):
    return (min(a, b), max(a, b)) in es


def segment_patches(mesh, cage_loops):
    """Split the garment into patches along snapped cage loops.

    Raises when a snapped loop has a gap (consecutive snapped vertices not
    joined by a mesh edge), since such a loop cannot separate the surface.
    Patches are the connected components of the non-cage vertices, ordered
    by their smallest vertex index.
    """
    es = _edge_set(mesh)
    loops = []
    for li, poly in enumerate(cage_loops):
        snapped = _snap_loop(mesh, poly)
        for i in range(len(snapped)):
            a, b = int(snapped[i]), int(snapped[(i + 1) % len(snapped)])
            if a != b and not _is_edge(es, a, b):
                raise ValueError("cage loop %d fails to separate: snapped "
                                 "vertices %d and %d are not adjacent"
                                 % (li, a, b))
        loops.append(snapped)
    cage = np.unique(np.concatenate(loops))
    in_cage = np.zeros(mesh.n_vertices, dtype=bool)
    in_cage[cage] = True

    # flood fill over non-cage vertices
    neighbors = [[] for _ in range(mesh.n_vertices)]
    for a, b in mesh.edges:
        neighbors[a].append(int(b))
        neighbors[b].append(int(a))
    comp = np.full(mesh.n_vertices, -1, dtype=np.int64)
    n_comp = 0
    for seed in range(mesh.n_vertices):
        if in_cage[seed] or comp[seed] >= 0:
            continue
        stack = [seed]
        comp[seed] = n_comp
        while stack:
            v = stack.pop()
            for w in neighbors[v]:
                if not in_cage[w] and comp[w] < 0:
                    comp[w] = n_comp
                    stack.append(w)
        n_comp += 1

    patches = []
    for c in range(n_comp):
        interior = np.nonzero(comp == c)[0]
        bnd = set()
        for v in interior:
            for w in neighbors[v]:
                if in_cage[w]:
                    bnd.add(int(w))
        patches.append(Patch(interior=interior,
                             boundary=np.asarray(sorted(bnd), dtype=np.int64)))
    return CageGraph(cage_vertices=cage, loops=loops, patches=patches)


@dataclass
class HarmonicBasis:
    matrix: np.ndarray            # (n_interior, n_boundary)
    interior: np.ndarray
    boundary: np.ndarray
    anisotropic: bool = False


def harmonic_basis(mesh, patch, anisotropy=None):
    """Interior influence of each boundary vertex via a Laplace solve.

    Column j solves L_w x = 0 on the patch interior with x = 1 at boundary
    vertex j and 0 at the others. Weights are 1 (isotropic) or the supplied
    positive per-edge field indexed like mesh.edges. Rows of the result sum
    to 1 (constants are harmonic), and isotropic entries respect the
    discrete maximum principle.
    """
    interior = patch.interior
    boundary = patch.boundary
    if len(interior) == 0:
        raise ValueError("patch has no interior")
    if anisotropy is not None:
        w = np.asarray(anisotropy, dtype=np.float64)
        if w.shape != (len(mesh.edges),) or (w <= 0).any():
            raise ValueError("anisotropy must be positive per-edge weights")
    else:
        w = np.ones(len(mesh.edges))

    loc = {int(v): i for i, v in enumerate(interior)}
    locb = {int(v): i for i, v in enumerate(boundary)}
    ni, nb = len(interior), len(boundary)
    rows_ii, cols_ii, vals_ii = [], [], []
    rhs = np.zeros((ni, nb))
    diag = np.zeros(ni)
    for e, (a, b) in enumerate(mesh.edges):
        a, b = int(a), int(b)
        ia = loc.get(a)
        ib = loc.get(b)
        if ia is not None and ib is not None:
            rows_ii += [ia, ib]
            cols_ii += [ib, ia]
            vals_ii += [-w[e], -w[e]]
            diag[ia] += w[e]
            diag[ib] += w[e]
        elif ia is not None and b in locb:
            diag[ia] += w[e]
            rhs[ia, locb[b]] += w[e]
        elif ib is not None and a in locb:
            diag[ib] += w[e]
            rhs[ib, locb[a]] += w[e]
    lii = scipy.sparse.coo_matrix(
        (vals_ii + diag.tolist(),
         (rows_ii + list(range(ni)), cols_ii + list(range(ni)))),
        shape=(ni, ni)).tocsc()
    solve = scipy.sparse.linalg.factorized(lii)
    mat = np.column_stack([solve(rhs[:, j]) for j in range(nb)])
    return HarmonicBasis(matrix=mat, interior=interior, boundary=boundary,
                         anisotropic=anisotropy is not None)


def extend_boundary_offsets(basis, boundary_offsets):
    """Carry per-boundary-vertex offsets into the patch interior: B @ f."""
    f = np.asarray(boundary_offsets, dtype=np.float64)
    if f.shape[0] != len(basis.boundary):
        raise ValueError("need one offset per boundary vertex")
    return basis.matrix @ f


def reconstruct_cage(key_points, target_lengths, samples_per_segment=8):
    """Cage curve from sparse key points and desired segment lengths.

    A periodic cubic spline interpolates the key points (hard constraint).
    Each inter-key segment is then rescaled about its chord: the deviation
    of the spline from the straight chord is multiplied by a factor found by
    bisection so the segment's arc length matches its target, where
    reachable (a segment can never get shorter than its chord, and the
    factor is capped at 4). Returns the sampled polyline, key points
    included, (n_segments * samples_per_segment, 3).
    """
    pts = np.asarray(key_points, dtype=np.float64)
    if len(pts) < 4:
        raise ValueError("need at least 4 key points")
    targets = np.asarray(target_lengths, dtype=np.float64)
    if (targets <= 0).any() or len(targets) != len(pts):
        raise ValueError("need one positive target length per segment")

    closed = np.vstack([pts, pts[:1]])
    chord = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(chord)])
    spline = scipy.interpolate.CubicSpline(s, closed, bc_type="periodic")

    out = []
    for k in range(len(pts)):
        ss = np.linspace(s[k], s[k + 1], 64)
        curve = spline(ss)
        line = (closed[k][None]
                + (ss - s[k])[:, None] / (s[k + 1] - s[k]) * (closed[k + 1] - closed[k])[None])
        dev = curve - line

        def arclen(scale):
            p = line + scale * dev
            return np.linalg.norm(np.diff(p, axis=0), axis=1).sum()

        lo_val = arclen(0.0)
        target = targets[k]
        if target <= lo_val:
            scale = 0.0
        elif target >= arclen(4.0):
            scale = 4.0
        else:
            lo, hi = 0.0, 4.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if arclen(mid) < target:
                    lo = mid
                else:
                    hi = mid
            scale = 0.5 * (lo + hi)
        final = line + scale * dev
        keep = np.linspace(0, len(ss) - 1, samples_per_segment,
                           endpoint=False).astype(int)
        out.append(final[keep])
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# io


def save_cage_config(path, loops, correspondences=None):
    doc = {"loops": [np.asarray(lp).tolist() for lp in loops],
           "correspondences": correspondences or {}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_cage_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [np.asarray(lp, dtype=np.float64) for lp in doc["loops"]], \
        doc.get("correspondences", {})


def basis_cache_key(mesh, cage_loops):
    h = hashlib.sha256()
    h.update(mesh.vertices.tobytes())
    h.update(mesh.uv.tobytes())
    h.update(mesh.triangles.tobytes())
    for lp in cage_loops:
        h.update(np.ascontiguousarray(lp, dtype=np.float64).tobytes())
    return h.hexdigest()


def save_bases(path, bases, key):
    arrays = []
    meta = []
    for i, b in enumerate(bases):
        arrays.append(("matrix_%d" % i, b.matrix))
        arrays.append(("interior_%d" % i, b.interior.astype(np.float64)))
        arrays.append(("boundary_%d" % i, b.boundary.astype(np.float64)))
        meta.append({"anisotropic": b.anisotropic})
    write_blob(path, {"kind": "harmonic-bases", "key": key, "patches": meta},
               arrays)


def load_bases(path, expect_key=None):
    header, arrays = read_blob(path)
    if expect_key is not None and header.get("key") != expect_key:
        raise ValueError("cached bases were built for a different mesh/cage")
    out = []
    for i, meta in enumerate(header["patches"]):
        out.append(HarmonicBasis(
            matrix=arrays["matrix_%d" % i],
            interior=arrays["interior_%d" % i].astype(np.int64),
            boundary=arrays["boundary_%d" % i].astype(np.int64),
            anisotropic=bool(meta["anisotropic"])))
    return out
