"""Triangle meshes with UV charts: the container shared by body and garment.

A mesh here is always "pattern aware": every vertex carries a UV coordinate
in [0,1]^2 and a chart id (0 = front, 1 = back for the tee). Rest metric
quantities (edge lengths, triangle areas) are frozen at construction and used
for distortion measures.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class ObjParseError(ValueError):
    """Malformed OBJ input; carries the 1-based line number."""

    def __init__(self, msg, line_no):
        super().__init__("line %d: %s" % (line_no, msg))
        self.line_no = line_no


@dataclass
class TbnFrame:
    """Per-vertex orthonormal frame: t (increasing u), b, n (normal)."""

    t: np.ndarray
    b: np.ndarray
    n: np.ndarray


@dataclass
class EdgeMetrics:
    lengths: np.ndarray          # (E,) current edge lengths
    degree: np.ndarray           # (V,) incident edge count
    area_distortion: np.ndarray  # (F,) current/rest - 1


class TriMesh:
    """Indexed triangle mesh with per-vertex UV and chart ids.

    Parameters are copied and frozen. ``vertices`` are the rest positions;
    deformed states are passed around as separate position arrays so one mesh
    can serve many poses.
    """

    def __init__(self, vertices, triangles, uv, chart_id=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.uv = np.ascontiguousarray(uv, dtype=np.float64)
        nv = len(self.vertices)
        if self.vertices.shape != (nv, 3) or self.uv.shape != (nv, 2):
            raise ValueError("vertices must be (n,3) and uv (n,2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (m,3)")
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= nv):
            raise ValueError("triangle index out of range")

        if chart_id is None:
            self.chart_id = self._charts_from_connectivity()
        else:
            self.chart_id = np.ascontiguousarray(chart_id, dtype=np.int64)
            if self.chart_id.shape != (nv,):
                raise ValueError("chart_id must be (n,)")
        tc = self.chart_id[self.triangles]
        if len(tc) and not ((tc[:, 0] == tc[:, 1]) & (tc[:, 0] == tc[:, 2])).all():
            raise ValueError("triangle spans multiple charts")

        # canonical edge list: sorted pairs, lexicographic order
        pairs = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        self.edges = np.unique(pairs, axis=0)

        self.rest_edge_lengths = edge_lengths(self.vertices, self.edges)
        self.rest_areas = triangle_areas(self.vertices, self.triangles)
        if len(self.edges) and self.rest_edge_lengths.min() <= 0.0:
            raise ValueError("zero-length rest edge")
        if len(self.triangles) and self.rest_areas.min() <= 1e-12:
            raise ValueError("degenerate rest triangle (area <= 1e-12)")

    def _charts_from_connectivity(self):
        """Chart ids from UV-island connectivity (connected components).

        Components are numbered 0,1,... in order of their lowest vertex index.
        """
        nv = len(self.vertices)
        parent = np.arange(nv)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b, c in self.triangles:
            ra, rb, rc = find(a), find(b), find(c)
            parent[rb] = ra
            parent[find(rc)] = find(ra)
        roots = np.array([find(i) for i in range(nv)])
        order = {}
        chart = np.empty(nv, dtype=np.int64)
        for i in range(nv):
            r = roots[i]
            if r not in order:
                order[r] = len(order)
            chart[i] = order[r]
        return chart

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_charts(self):
        return int(self.chart_id.max()) + 1 if len(self.chart_id) else 0

    def chart_uv_window(self, chart):
        """(u_min, v_min, u_max, v_max) bounding box of one chart's UVs."""
        sel = self.uv[self.chart_id == chart]
        if len(sel) == 0:
            raise ValueError("empty chart %d" % chart)
        lo = sel.min(axis=0)
        hi = sel.max(axis=0)
        return (lo[0], lo[1], hi[0], hi[1])

    def uv_overlaps(self, chart=None):
        """List of same-chart triangle index pairs whose UV images overlap.

        Exact test (edge crossings + containment) with a bbox prefilter;
        shared vertices or edge-touching pairs do not count. Quadratic in the
        worst case, fine at the mesh sizes used here.
        """
        out = []
        charts = [chart] if chart is not None else range(self.n_charts)
        for c in charts:
            tsel = np.nonzero(self.chart_id[self.triangles[:, 0]] == c)[0]
            uvs = self.uv[self.triangles[tsel]]  # (k,3,2)
            lo = uvs.min(axis=1)
            hi = uvs.max(axis=1)
            for ii in range(len(tsel)):
                for jj in range(ii + 1, len(tsel)):
                    if (lo[ii] > hi[jj]).any() or (lo[jj] > hi[ii]).any():
                        continue
                    if set(self.triangles[tsel[ii]]) & set(self.triangles[tsel[jj]]):
                        continue
                    if _tri_tri_overlap_2d(uvs[ii], uvs[jj]):
                        out.append((int(tsel[ii]), int(tsel[jj])))
        return out


def _tri_tri_overlap_2d(t1, t2, eps=1e-12):
    """True if the open interiors of two UV triangles intersect."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def seg_cross(p, q, r, s):
        d1 = orient(r, s, p)
        d2 = orient(r, s, q)
        d3 = orient(p, q, r)
        d4 = orient(p, q, s)
        return ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
               ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps))

    def contains(tri, p):
        d = [orient(tri[k], tri[(k + 1) % 3], p) for k in range(3)]
        s = np.sign(orient(tri[0], tri[1], tri[2]))
        return all(s * dk > eps for dk in d)

    for i in range(3):
        for j in range(3):
            if seg_cross(t1[i], t1[(i + 1) % 3], t2[j], t2[(j + 1) % 3]):
                return True
    return any(contains(t2, p) for p in t1) or any(contains(t1, p) for p in t2)


def triangle_areas(positions, triangles):
    p = np.asarray(positions, dtype=np.float64)
    e1 = p[triangles[:, 1]] - p[triangles[:, 0]]
    e2 = p[triangles[:, 2]] - p[triangles[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def edge_lengths(positions, edges):
    p = np.asarray(positions, dtype=np.float64)
    return np.linalg.norm(p[edges[:, 1]] - p[edges[:, 0]], axis=1)


def edge_metrics(mesh, positions):
    """Current edge lengths, vertex degrees, and per-triangle area distortion.

    area_distortion = current_area / rest_area - 1, so the rest state is 0
    everywhere and a uniform 2x scale of positions gives 3 everywhere.
    """
    lengths = edge_lengths(positions, mesh.edges)
    degree = np.zeros(mesh.n_vertices, dtype=np.int64)
    np.add.at(degree, mesh.edges[:, 0], 1)
    np.add.at(degree, mesh.edges[:, 1], 1)
    areas = triangle_areas(positions, mesh.triangles)
    return EdgeMetrics(lengths, degree, areas / mesh.rest_areas - 1.0)


def compute_normals_and_tbn(mesh, positions):
    """Area-weighted vertex normals plus a UV-aligned tangent frame.

    n is the normalized sum of incident face normals (cross products, so the
    weighting is by face area). t starts from the per-vertex averaged UV
    gradient direction of increasing u, is Gram-Schmidt orthonormalized
    against n, and b = n x t closes a right-handed frame with t x b = n.

    Vertices whose UV gradient is degenerate fall back to projecting global
    +x into the tangent plane (then +y if n is parallel to x). Isolated
    vertices raise.
    """
    p = np.asarray(positions, dtype=np.float64)
    nv = len(p)
    tris = mesh.triangles
    if nv != mesh.n_vertices:
        raise ValueError("positions length mismatch")

    incident = np.zeros(nv, dtype=np.int64)
    np.add.at(incident, tris.reshape(-1), 1)
    if (incident == 0).any():
        raise ValueError("isolated vertices: %s"
                         % np.nonzero(incident == 0)[0].tolist())

    e1 = p[tris[:, 1]] - p[tris[:, 0]]
    e2 = p[tris[:, 2]] - p[tris[:, 0]]
    fn = np.cross(e1, e2)  # length = 2 * area
    fa = 0.5 * np.linalg.norm(fn, axis=1)
    ok = fa > 1e-12

    nacc = np.zeros((nv, 3))
    for k in range(3):
        np.add.at(nacc, tris[ok, k], fn[ok])
    nn = np.linalg.norm(nacc, axis=1)
    bad = nn < 1e-12
    nacc[bad] = (0.0, 0.0, 1.0)
    nn[bad] = 1.0
    n = nacc / nn[:, None]

    # face UV gradient of u: dp/du = (dv2*e1 - dv1*e2)/det
    duv1 = mesh.uv[tris[:, 1]] - mesh.uv[tris[:, 0]]
    duv2 = mesh.uv[tris[:, 2]] - mesh.uv[tris[:, 0]]
    det = duv1[:, 0] * duv2[:, 1] - duv2[:, 0] * duv1[:, 1]
    okt = ok & (np.abs(det) > 1e-12)
    tface = np.zeros_like(fn)
    tface[okt] = (duv2[okt, 1, None] * e1[okt]
                  - duv1[okt, 1, None] * e2[okt]) / det[okt, None]
    tacc = np.zeros((nv, 3))
    for k in range(3):
        np.add.at(tacc, tris[okt, k], fa[okt, None] * tface[okt])

    t = tacc - np.einsum("ij,ij->i", tacc, n)[:, None] * n
    tn = np.linalg.norm(t, axis=1)
    weak = tn < 1e-10
    if weak.any():
        for axis in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)):
            still = np.nonzero(weak)[0]
            if len(still) == 0:
                break
            cand = np.asarray(axis) - n[still] * (n[still] @ np.asarray(axis))[:, None]
            cn = np.linalg.norm(cand, axis=1)
            good = cn > 1e-10
            t[still[good]] = cand[good]
            tn[still[good]] = cn[good]
            weak[still[good]] = False
    t = t / tn[:, None]
    b = np.cross(n, t)
    b = b / np.linalg.norm(b, axis=1)[:, None]
    return TbnFrame(t=t, b=b, n=n)


def closest_point_barycentric(mesh, positions, query):
    """Closest surface point for one query or a batch.

    Returns (triangle index, barycentric weights, distance); arrays when
    ``query`` is (q,3). Exhaustive scan over triangles, ties to the lowest
    triangle index.
    """
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    idx, bary, dist = kernels.closest_point_tris(
        np.atleast_2d(q), np.asarray(positions, dtype=np.float64),
        mesh.triangles)
    if single:
        return int(idx[0]), bary[0], float(dist[0])
    return idx, bary, dist


# ---------------------------------------------------------------------------
# OBJ io


def load_obj(path):
    """Read an OBJ with positions and texture coordinates.

    Returns (mesh, warnings). OBJ indexes positions and vt records
    independently; vertices are split so each (position, vt) pair used by a
    face becomes one mesh vertex, which is what a per-vertex-UV container
    needs. Chart ids come from connectivity of the split mesh. Warnings (a
    list of strings) flag non-manifold edges; nothing is printed.
    """
    positions = []
    texcoords = []
    corner_map = {}
    verts = []
    uvs = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    positions.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    texcoords.append([float(x) for x in parts[1:3]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise ObjParseError("only triangle faces supported",
                                            line_no)
                    tri = []
                    for corner in parts[1:]:
                        sub = corner.split("/")
                        if len(sub) < 2 or sub[1] == "":
                            raise ObjParseError(
                                "face corner %r lacks a vt index" % corner,
                                line_no)
                        vi = int(sub[0])
                        ti = int(sub[1])
                        vi = vi - 1 if vi > 0 else len(positions) + vi
                        ti = ti - 1 if ti > 0 else len(texcoords) + ti
                        key = (vi, ti)
                        if key not in corner_map:
                            if not 0 <= vi < len(positions):
                                raise ObjParseError("vertex index out of range",
                                                    line_no)
                            if not 0 <= ti < len(texcoords):
                                raise ObjParseError("vt index out of range",
                                                    line_no)
                            corner_map[key] = len(verts)
                            verts.append(positions[vi])
                            uvs.append(texcoords[ti])
                        tri.append(corner_map[key])
                    faces.append(tri)
            except ObjParseError:
                raise
            except (ValueError, IndexError) as exc:
                raise ObjParseError(str(exc), line_no) from exc
    if not faces:
        raise ObjParseError("no faces found", 0)
    mesh = TriMesh(np.array(verts), np.array(faces), np.array(uvs))

    warnings = []
    pairs = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    for (a, b), c in zip(uniq, counts):
        if c > 2:
            warnings.append("non-manifold edge (%d,%d) shared by %d faces"
                            % (a, b, c))
    return mesh, warnings


def save_obj(mesh, path):
    """Write mesh as OBJ (v/vt/f, 1-based, full float64 precision)."""
    lines = []
    for v in mesh.vertices:
        lines.append("v %.17g %.17g %.17g" % tuple(v))
    for q in mesh.uv:
        lines.append("vt %.17g %.17g" % tuple(q))
    for f in mesh.triangles:
        lines.append("f %d/%d %d/%d %d/%d"
                     % (f[0] + 1, f[0] + 1, f[1] + 1, f[1] + 1,
                        f[2] + 1, f[2] + 1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# generators used by tests and the procedural garment


def make_grid_mesh(nu, nv, uv_window=(0.0, 0.0, 1.0, 1.0), position_fn=None,
                   chart=0):
    """Regular grid chart: nu x nv vertices, quads split along one diagonal.

    uv_window = (u0, v0, u1, v1). position_fn maps (u, v) arrays to (n,3)
    positions; the default lays the chart flat in the z=0 plane at unit
    scale.
    """
    u0, v0, u1, v1 = uv_window
    us = np.linspace(u0, u1, nu)
    vs = np.linspace(v0, v1, nv)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    uv = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    if position_fn is None:
        pos = np.stack([uv[:, 0], uv[:, 1], np.zeros(len(uv))], axis=1)
    else:
        pos = np.asarray(position_fn(uv[:, 0], uv[:, 1]), dtype=np.float64)
    tris = []
    for i in range(nu - 1):
        for j in range(nv - 1):
            a = i * nv + j
            b = (i + 1) * nv + j
            tris.append((a, b, a + 1))
            tris.append((a + 1, b, b + 1))
    return TriMesh(pos, np.array(tris), uv,
                   chart_id=np.full(len(uv), chart, dtype=np.int64))


def make_icosphere(subdiv=3, radius=1.0):
    """Subdivided icosahedron with spherical-coordinate UV (test geometry)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)],
        dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [tuple(v) for v in verts]
    for _ in range(subdiv):
        cache = {}
        vlist = list(verts)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = np.asarray(vlist[a]) + np.asarray(vlist[b])
                m /= np.linalg.norm(m)
                cache[key] = len(vlist)
                vlist.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts, faces = vlist, new_faces
    v = np.asarray(verts) * radius
    theta = np.arccos(np.clip(v[:, 2] / radius, -1, 1))
    az = np.arctan2(v[:, 1], v[:, 0])
    uv = np.stack([(az + np.pi) / (2 * np.pi), theta / np.pi], axis=1)
    return TriMesh(v, np.array(faces), uv,
                   chart_id=np.zeros(len(v), dtype=np.int64))
