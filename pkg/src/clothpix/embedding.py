"""Shrink wrap, cloth-pixel embedding, and offset encode/decode.

The garment is morphed onto the body once in the rest pose (Poisson morph
driven by cage displacements, projection to the analytic surface, distortion
equalization). Each cloth vertex is then pinned to its closest body triangle
with barycentric weights. From there on, any posed cloth shape is just a
per-vertex offset from the embedded on-body position, expressed either in
the local tangent/bitangent/normal frame interpolated from the body or in
the root joint frame.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .meshcore import closest_point_barycentric, compute_normals_and_tbn
from .skeleton import forward_kinematics
from .body import skin_lbs

OFFSET_CAP_TEE = 20.0
OFFSET_CAP_NECKTIE = 80.0

FRAME_MODES = ("local-tbn", "root-frame")


@dataclass
class OffsetField:
    """Per cloth vertex dx = (du, dv, dn) in cm, in frame_mode coordinates."""

    values: np.ndarray
    frame_mode: str = "local-tbn"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError("offset values must be (n,3)")
        if self.frame_mode not in FRAME_MODES:
            raise ValueError("unknown frame_mode %r" % (self.frame_mode,))

    def check(self, cap=OFFSET_CAP_TEE):
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite offsets")
        mags = np.linalg.norm(self.values, axis=1)
        if (mags > cap).any():
            worst = int(mags.argmax())
            raise ValueError("offset magnitude %.3f at vertex %d exceeds cap %.3f"
                             % (mags[worst], worst, cap))
        return self


@dataclass
class PixelEmbedding:
    """Barycentric anchor of each cloth vertex on the body mesh."""

    triangle: np.ndarray   # (n,) body triangle index
    bary: np.ndarray       # (n,3) nonneg, rows sum to 1
    frame_mode: str
    body_hash: str

    def __post_init__(self):
        self.triangle = np.asarray(self.triangle, dtype=np.int64)
        self.bary = np.asarray(self.bary, dtype=np.float64)
        if self.frame_mode not in FRAME_MODES:
            raise ValueError("unknown frame_mode %r" % (self.frame_mode,))
        if (self.bary < -1e-12).any() or \
                np.abs(self.bary.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("barycentric weights must be >=0 and sum to 1")


# ---------------------------------------------------------------------------
# shrink wrap stages


def _graph_components(n, edges):
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        parent[find(a)] = find(b)
    comp = {}
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        r = find(i)
        if r not in comp:
            comp[r] = len(comp)
        labels[i] = comp[r]
    return labels


def poisson_morph(cloth, cage_displacements):
    """Harmonically propagate cage displacements to the whole garment.

    Solves L d = 0 per coordinate with the uniform graph Laplacian and
    Dirichlet values on the cage vertices, then returns rest + d. Constants
    are harmonic, so equal displacements translate the garment rigidly.
    """
    idx = np.asarray(sorted(cage_displacements), dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("no cage displacements given")
    disp = np.asarray([cage_displacements[int(i)] for i in idx], dtype=np.float64)

    n = cloth.n_vertices
    labels = _graph_components(n, cloth.edges)
    constrained_labels = set(labels[idx].tolist())
    for c in range(labels.max() + 1):
        if c not in constrained_labels:
            example = int(np.nonzero(labels == c)[0][0])
            raise ValueError("connected component %d (e.g. vertex %d) has no "
                             "cage constraint" % (c, example))

    e = cloth.edges
    data = np.concatenate([np.ones(len(e)) * -1.0, np.ones(len(e)) * -1.0])
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    deg = -np.asarray(adj.sum(axis=1)).ravel()
    lap = scipy.sparse.diags(deg) + adj

    free = np.setdiff1d(np.arange(n), idx)
    d_full = np.zeros((n, 3))
    d_full[idx] = disp
    if len(free):
        lff = lap[free][:, free].tocsc()
        rhs = -lap[free][:, idx] @ disp
        d_full[free] = scipy.sparse.linalg.spsolve(lff, rhs)
        if d_full.ndim == 1:
            d_full = d_full[:, None]
    return cloth.vertices + d_full


def _surface_of(body_or_surface):
    return getattr(body_or_surface, "surface", body_or_surface)


def pushout(positions, body, tol=1e-6):
    """One-sided: move penetrating vertices out to the analytic surface."""
    return _surface_of(body).pushout(positions, tol=tol)


def project_to_surface(positions, body):
    return _surface_of(body).project(positions)


@dataclass
class EqualizeInfo:
    converged: bool
    iterations: int
    spread_history: list
    alpha: np.ndarray


def equalize_distortion(cloth, positions, body, max_iters=200, tol=1e-4,
                        step=0.5):
    """Even out edge-length distortion while staying on the body surface.

    Per iteration: compute per-vertex mean length ratios alpha_v over
    incident edges, set each edge's target to (1/2)(alpha_a + alpha_b) times
    its rest length, take one damped relaxation step toward those targets,
    and re-project to the surface. A step that would increase the spread
    max(alpha) - min(alpha) is rejected and retried with half the step, so
    the spread is non-increasing over accepted iterations.

    ``cloth`` only needs .edges and .rest_edge_lengths; ``body`` anything
    with a .project method (or a BodyModel). Returns (positions, info).
    """
    surf = _surface_of(body)
    edges = cloth.edges
    rest = cloth.rest_edge_lengths
    n = len(positions)
    deg = np.zeros(n)
    np.add.at(deg, edges[:, 0], 1.0)
    np.add.at(deg, edges[:, 1], 1.0)

    def alpha_of(p):
        ratio = np.linalg.norm(p[edges[:, 1]] - p[edges[:, 0]], axis=1) / rest
        acc = np.zeros(n)
        np.add.at(acc, edges[:, 0], ratio)
        np.add.at(acc, edges[:, 1], ratio)
        return acc / deg

    p = np.array(positions, dtype=np.float64)
    alpha = alpha_of(p)
    spread = alpha.max() - alpha.min()
    history = [spread]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        target = 0.5 * (alpha[edges[:, 0]] + alpha[edges[:, 1]]) * rest
        vec = p[edges[:, 1]] - p[edges[:, 0]]
        length = np.linalg.norm(vec, axis=1)
        unit = vec / np.maximum(length, 1e-30)[:, None]
        # full per-edge correction; damping comes from the step factor and
        # the per-vertex degree average below
        corr = (length - target)[:, None] * unit

        trial_step = step
        accepted = False
        for _ in range(10):
            delta = np.zeros_like(p)
            np.add.at(delta, edges[:, 0], corr * trial_step)
            np.add.at(delta, edges[:, 1], -corr * trial_step)
            cand = surf.project(p + delta / deg[:, None])
            alpha_cand = alpha_of(cand)
            spread_cand = alpha_cand.max() - alpha_cand.min()
            if spread_cand <= spread * (1.0 + 1e-12) + 1e-15:
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            break
        rel_change = np.abs(alpha_cand - alpha).max() / max(np.abs(alpha).max(), 1e-30)
        p = cand
        alpha = alpha_cand
        spread = spread_cand
        history.append(spread)
        if rel_change < tol:
            converged = True
            break
    return p, EqualizeInfo(converged=converged, iterations=it,
                           spread_history=history, alpha=alpha)


def shrink_wrap(cloth, body, cage_displacements, max_iters=200, tol=1e-4):
    """Full wrap: Poisson morph, surface projection, equalization."""
    p = poisson_morph(cloth, cage_displacements)
    p = project_to_surface(p, body)
    return equalize_distortion(cloth, p, body, max_iters=max_iters, tol=tol)


# ---------------------------------------------------------------------------
# embedding and offsets


def embed_pixels(wrapped_positions, body, frame_mode="local-tbn",
                 max_dist=0.5):
    """Pin each wrapped cloth vertex to its closest body triangle."""
    tri, bary, dist = closest_point_barycentric(
        body.mesh, body.mesh.vertices, np.asarray(wrapped_positions))
    far = np.nonzero(dist > max_dist)[0]
    if len(far):
        raise ValueError("wrap failed: %d vertices farther than %.2f cm from "
                         "the body, e.g. %s" % (len(far), max_dist,
                                                far[:8].tolist()))
    bary = np.clip(bary, 0.0, None)
    bary = bary / bary.sum(axis=1, keepdims=True)
    return PixelEmbedding(triangle=tri, bary=bary, frame_mode=frame_mode,
                          body_hash=body.content_hash())


def embedded_world_positions(emb, body, pose):
    """On-body pixel positions and frames for a pose.

    The frame is the barycentric blend of the skinned body's per-vertex TBN,
    re-orthonormalized (normal first).
    """
    if emb.body_hash != body.content_hash():
        raise ValueError("embedding was built against a different body")
    skinned = skin_lbs(body, pose)
    corners = body.mesh.triangles[emb.triangle]
    pos = np.einsum("nk,nkj->nj", emb.bary, skinned[corners])

    frame = compute_normals_and_tbn(body.mesh, skinned)
    n = np.einsum("nk,nkj->nj", emb.bary, frame.n[corners])
    t = np.einsum("nk,nkj->nj", emb.bary, frame.t[corners])
    n = n / np.maximum(np.linalg.norm(n, axis=1), 1e-30)[:, None]
    t = t - np.einsum("ij,ij->i", t, n)[:, None] * n
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
    return pos, (t, b, n)


def _root_rotation(body, pose):
    fk = forward_kinematics(body.skeleton, pose)
    return fk.rotations[0]


def encode_offsets(target_positions, emb, body, pose, cap=OFFSET_CAP_TEE):
    """Offsets dx of a target cloth shape from the embedded positions."""
    target = np.asarray(target_positions, dtype=np.float64)
    pos, (t, b, n) = embedded_world_positions(emb, body, pose)
    d = target - pos
    if emb.frame_mode == "local-tbn":
        vals = np.stack([np.einsum("ij,ij->i", d, t),
                         np.einsum("ij,ij->i", d, b),
                         np.einsum("ij,ij->i", d, n)], axis=1)
    else:
        vals = d @ _root_rotation(body, pose)
    return OffsetField(vals, frame_mode=emb.frame_mode).check(cap=cap)


def apply_offsets(field, emb, body, pose):
    """Inverse of encode_offsets: embedded positions plus frame offsets."""
    if field.frame_mode != emb.frame_mode:
        raise ValueError("frame_mode mismatch between field and embedding")
    pos, (t, b, n) = embedded_world_positions(emb, body, pose)
    v = field.values
    if emb.frame_mode == "local-tbn":
        return pos + v[:, [0]] * t + v[:, [1]] * b + v[:, [2]] * n
    return pos + v @ _root_rotation(body, pose).T


# ---------------------------------------------------------------------------
# io


def save_embedding(path, emb):
    doc = {"body_hash": emb.body_hash, "frame_mode": emb.frame_mode,
           "records": [[int(tr), float(b0), float(b1), float(b2)]
                       for tr, (b0, b1, b2) in zip(emb.triangle, emb.bary)]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_embedding(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rec = np.asarray(doc["records"], dtype=np.float64)
    return PixelEmbedding(triangle=rec[:, 0].astype(np.int64),
                          bary=rec[:, 1:4], frame_mode=doc["frame_mode"],
                          body_hash=doc["body_hash"])
