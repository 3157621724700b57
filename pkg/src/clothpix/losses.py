"""Training objectives on offset images and their exact reverse-mode gradients.

Three terms. The pixel term is a masked mean of a per-pixel channel norm
between predicted and target rasters. The normal term decodes the prediction
to world-space vertex positions and penalizes cosine distance between
predicted and target unit vertex normals. The edge term penalizes absolute
edge-length differences. Normal and edge terms differentiate through the
whole decode chain:

    image -> bilinear sample at vertex UVs -> offsets -> positions
          -> vertex normals / edge lengths

Each stage has a hand-written vector-Jacobian product so the composite
gradient with respect to the predicted raster (or, for vector-output models,
the predicted offsets) is exact up to the usual subgradient conventions:
absolute-value kinks take 0, degenerate faces and zero-length edges are
dropped from the differentiable path.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .embedding import OffsetField, apply_offsets, embedded_world_positions
from .meshcore import edge_lengths
from .skeleton import forward_kinematics

PIXEL_NORMS = ("l1", "l2")
DEGENERATE_AREA = 1e-12
FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class LossWeights:
    """Pixel norm choice plus multipliers for the geometry terms."""

    pixel_norm: str = "l2"
    lambda_normal: float = 0.0
    lambda_edge: float = 0.0

    def __post_init__(self):
        if self.pixel_norm not in PIXEL_NORMS:
            raise ValueError("pixel_norm must be one of %s" % (PIXEL_NORMS,))
        if self.lambda_normal < 0.0 or self.lambda_edge < 0.0:
            raise ValueError("loss weights must be >= 0")


# ---------------------------------------------------------------------------
# pixel term


def _pixel_norm_and_grad(diff, norm):
    """Per-pixel channel norm and its derivative w.r.t. diff.

    l1 sums |d_c| over channels, l2 sums d_c^2 (the squared Euclidean norm,
    whose gradient is linear in the residual).
    """
    if norm == "l1":
        return np.abs(diff).sum(axis=-1), np.sign(diff)
    if norm == "l2":
        return (diff * diff).sum(axis=-1), 2.0 * diff
    raise ValueError("pixel_norm must be one of %s" % (PIXEL_NORMS,))


def loss_grid_pix(pred, truth, norm="l2"):
    """Masked mean of the per-pixel channel norm between two images."""
    val, _ = grad_grid_pix(pred.data, truth.data, truth.mask, norm)
    return val


def grad_grid_pix(pred_data, truth_data, mask, norm):
    """Pixel loss and its gradient w.r.t. pred_data ((H, W, C) arrays)."""
    if pred_data.shape != truth_data.shape:
        raise ValueError("image shape mismatch %s vs %s"
                         % (pred_data.shape, truth_data.shape))
    wsum = float(mask.sum())
    if wsum == 0.0:
        raise ValueError("empty mask")
    diff = (pred_data - truth_data) * mask[:, :, None]
    per_pixel, dnorm = _pixel_norm_and_grad(diff, norm)
    loss = float(per_pixel.sum()) / wsum
    return loss, dnorm * (mask[:, :, None] / wsum)


# ---------------------------------------------------------------------------
# vertex normals with VJP


def vertex_unit_normals(positions, triangles):
    """Area-weighted unit vertex normals and a degenerate-vertex flag.

    Face normals are unnormalized cross products (length twice the area),
    accumulated onto corner vertices; faces below the area cutoff are
    skipped. A vertex whose accumulated normal is numerically zero gets the
    fixed fallback normal and is flagged.
    """
    p = np.asarray(positions, dtype=np.float64)
    tris = np.asarray(triangles)
    e1 = p[tris[:, 1]] - p[tris[:, 0]]
    e2 = p[tris[:, 2]] - p[tris[:, 0]]
    fn = np.cross(e1, e2)
    ok = 0.5 * np.linalg.norm(fn, axis=1) > DEGENERATE_AREA

    acc = np.zeros((len(p), 3))
    for k in range(3):
        np.add.at(acc, tris[ok, k], fn[ok])
    norms = np.linalg.norm(acc, axis=1)
    flags = norms < 1e-12
    unit = np.where(flags[:, None], FALLBACK_NORMAL, acc)
    unit = unit / np.where(flags, 1.0, norms)[:, None]
    return unit, flags


def _vertex_normals_vjp(positions, triangles, dunit):
    """Positions gradient given a cotangent on the unit vertex normals.

    Flagged vertices hold a constant fallback normal, so their cotangent is
    dropped. Mirrors the forward pass of vertex_unit_normals stage by stage:
    normalize, accumulate, cross product.
    """
    p = np.asarray(positions, dtype=np.float64)
    tris = np.asarray(triangles)
    e1 = p[tris[:, 1]] - p[tris[:, 0]]
    e2 = p[tris[:, 2]] - p[tris[:, 0]]
    fn = np.cross(e1, e2)
    ok = 0.5 * np.linalg.norm(fn, axis=1) > DEGENERATE_AREA

    acc = np.zeros((len(p), 3))
    for k in range(3):
        np.add.at(acc, tris[ok, k], fn[ok])
    norms = np.linalg.norm(acc, axis=1)
    live = norms >= 1e-12
    unit = np.zeros_like(acc)
    unit[live] = acc[live] / norms[live, None]

    dacc = np.zeros_like(acc)
    dot = np.einsum("ij,ij->i", unit[live], dunit[live])
    dacc[live] = (dunit[live] - unit[live] * dot[:, None]) / norms[live, None]

    dfn = dacc[tris[:, 0]] + dacc[tris[:, 1]] + dacc[tris[:, 2]]
    dfn[~ok] = 0.0
    de1 = np.cross(e2, dfn)
    de2 = np.cross(dfn, e1)
    dp = np.zeros_like(p)
    np.add.at(dp, tris[:, 1], de1)
    np.add.at(dp, tris[:, 2], de2)
    np.add.at(dp, tris[:, 0], -(de1 + de2))
    return dp


def normal_term(positions, triangles, gt_normals):
    """Mean cosine distance to target unit normals, with positions VJP."""
    unit, flags = vertex_unit_normals(positions, triangles)
    nv = len(unit)
    loss = float((1.0 - np.einsum("ij,ij->i", unit, gt_normals)).sum()) / nv
    dunit = -gt_normals / nv
    return loss, _vertex_normals_vjp(positions, triangles, dunit), flags


# ---------------------------------------------------------------------------
# edge term


def edge_term(positions, edges, gt_lengths):
    """Mean absolute edge-length error, with positions VJP.

    Zero-length predicted edges have no defined direction and contribute no
    gradient; exact kinks (predicted length equals target) take subgradient
    zero through the sign.
    """
    p = np.asarray(positions, dtype=np.float64)
    d = p[edges[:, 0]] - p[edges[:, 1]]
    lengths = np.linalg.norm(d, axis=1)
    ne = len(edges)
    loss = float(np.abs(lengths - gt_lengths).sum()) / ne

    s = np.sign(lengths - gt_lengths) / ne
    safe = lengths > 1e-30
    coeff = np.where(safe, s / np.maximum(lengths, 1e-30), 0.0)
    dp = np.zeros_like(p)
    np.add.at(dp, edges[:, 0], coeff[:, None] * d)
    np.add.at(dp, edges[:, 1], -coeff[:, None] * d)
    return loss, dp


# ---------------------------------------------------------------------------
# offsets -> positions with VJP


@dataclass
class DecodeFrames:
    """Per-pose constants that map offset values to world positions."""

    base: np.ndarray
    tbn: tuple
    root_rot: np.ndarray
    frame_mode: str


def build_decode_frames(emb, body, pose):
    base, tbn = embedded_world_positions(emb, body, pose)
    root_rot = forward_kinematics(body.skeleton, pose).rotations[0]
    return DecodeFrames(base, tbn, root_rot, emb.frame_mode)


def decode_positions(frames, values):
    t, b, n = frames.tbn
    if frames.frame_mode == "local-tbn":
        return (frames.base + values[:, [0]] * t + values[:, [1]] * b
                + values[:, [2]] * n)
    return frames.base + values @ frames.root_rot.T


def decode_positions_vjp(frames, dpos):
    """Offset-values gradient given a cotangent on decoded positions."""
    t, b, n = frames.tbn
    if frames.frame_mode == "local-tbn":
        return np.stack([np.einsum("ij,ij->i", dpos, t),
                         np.einsum("ij,ij->i", dpos, b),
                         np.einsum("ij,ij->i", dpos, n)], axis=1)
    return dpos @ frames.root_rot


# ---------------------------------------------------------------------------
# image -> offsets (bilinear sampling plan) with VJP


class BilinearPlan:
    """Frozen bilinear stencil from an image grid onto cloth vertex UVs.

    Precomputes the 2x2 corner rows/cols, weights, and channel block of every
    vertex against a template image geometry, so repeated sampling and its
    transpose (scatter-add of a cotangent) skip the per-call window math.
    Matches sample_at_uv: corners with numerically zero weight are dropped,
    any live corner off the grid or unmasked is an error at build time.
    """

    def __init__(self, img, cloth):
        from .clothimage import _uv_to_pixel

        nv = len(cloth.uv)
        if img.channels == 6:
            vert_chart = cloth.chart_id
        else:
            vert_chart = np.full(nv, img.charts[0])

        self.rows = np.zeros((nv, 4), dtype=np.int64)
        self.cols = np.zeros((nv, 4), dtype=np.int64)
        self.weights = np.zeros((nv, 4))
        self.block = np.zeros(nv, dtype=np.int64)
        self.shape = (img.height, img.width, img.channels)

        for k, chart in enumerate(img.charts):
            sel = np.nonzero(vert_chart == chart)[0]
            if not len(sel):
                continue
            pix = _uv_to_pixel(cloth.uv[sel], img.uv_windows[k],
                               img.width, img.height)
            j0 = np.floor(pix[:, 0]).astype(np.int64)
            i0 = np.floor(pix[:, 1]).astype(np.int64)
            fx = pix[:, 0] - j0
            fy = pix[:, 1] - i0
            self.block[sel] = 3 * k
            for c, (di, dj, w) in enumerate((
                    (0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                    (1, 0, fy * (1 - fx)), (1, 1, fy * fx))):
                ii = i0 + di
                jj = j0 + dj
                live = w > 1e-12
                inb = (ii >= 0) & (ii < img.height) & \
                      (jj >= 0) & (jj < img.width)
                ok = inb.copy()
                ok[inb] &= img.mask[ii[inb], jj[inb]]
                if (live & ~ok).any():
                    v = int(sel[np.nonzero(live & ~ok)[0][0]])
                    raise ValueError(
                        "bilinear footprint of vertex %d touches unmasked "
                        "pixels; rasterize with more pad_rings" % v)
                use = live & ok
                self.rows[sel[use], c] = ii[use]
                self.cols[sel[use], c] = jj[use]
                self.weights[sel[use], c] = w[use]

    def _flat_indices(self):
        """(n, 4, 3) linear indices into the raveled (H, W, C) array."""
        h, w, ch = self.shape
        lin = (self.rows * w + self.cols) * ch
        return lin[:, :, None] + (self.block[:, None, None]
                                  + np.arange(3)[None, None, :])

    def sample(self, data):
        """(H, W, C) image data -> (n, 3) offset values."""
        if data.shape != self.shape:
            raise ValueError("image shape %s does not match plan %s"
                             % (data.shape, self.shape))
        corners = data.reshape(-1)[self._flat_indices()]
        return np.einsum("nc,ncj->nj", self.weights, corners)

    def vjp(self, dvals):
        """(n, 3) offsets cotangent -> (H, W, C) image cotangent."""
        ddata = np.zeros(self.shape)
        contrib = self.weights[:, :, None] * dvals[:, None, :]
        np.add.at(ddata.reshape(-1), self._flat_indices().reshape(-1),
                  contrib.reshape(-1))
        return ddata


# ---------------------------------------------------------------------------
# public geometry losses


def loss_normal(pred_field, truth_positions, emb, body, pose, cloth):
    """Mean cosine distance between decoded and target vertex normals."""
    pos = apply_offsets(pred_field, emb, body, pose)
    gt, _ = vertex_unit_normals(truth_positions, cloth.triangles)
    loss, _, flags = normal_term(pos, cloth.triangles, gt)
    if flags.any():
        warnings.warn("%d vertices with degenerate normals use the fallback"
                      % int(flags.sum()))
    return loss


def loss_edge(pred_field, truth_positions, emb, body, pose, cloth):
    """Mean absolute difference of decoded vs target edge lengths."""
    pos = apply_offsets(pred_field, emb, body, pose)
    gt = edge_lengths(np.asarray(truth_positions, dtype=np.float64),
                      cloth.edges)
    loss, _ = edge_term(pos, cloth.edges, gt)
    return loss


# ---------------------------------------------------------------------------
# fused objective for training


@dataclass
class GeomTarget:
    """Per-sample supervision for the geometry terms of one pose.

    plan is only needed when the prediction is a raster (image_objective);
    vector-output models decode their offsets directly.
    """

    frames: DecodeFrames
    triangles: np.ndarray
    edges: np.ndarray
    gt_normals: np.ndarray
    gt_edge_lengths: np.ndarray
    plan: BilinearPlan = None


def make_geom_target(cloth, emb, body, pose, truth_positions, plan=None):
    truth = np.asarray(truth_positions, dtype=np.float64)
    gt_n, _ = vertex_unit_normals(truth, cloth.triangles)
    return GeomTarget(
        frames=build_decode_frames(emb, body, pose),
        triangles=cloth.triangles,
        edges=cloth.edges,
        gt_normals=gt_n,
        gt_edge_lengths=edge_lengths(truth, cloth.edges),
        plan=plan)


def image_objective(pred_data, truth_img, weights, geom=None):
    """Total loss and gradient w.r.t. a predicted raster (H, W, C).

    Returns (total, parts, dpred) where parts maps term name to value. The
    geometry terms need a GeomTarget; with both lambdas zero it is unused.
    """
    total, dpred = grad_grid_pix(pred_data, truth_img.data, truth_img.mask,
                                 weights.pixel_norm)
    parts = {"pixel": total, "normal": 0.0, "edge": 0.0}
    if weights.lambda_normal == 0.0 and weights.lambda_edge == 0.0:
        return total, parts, dpred
    if geom is None or geom.plan is None:
        raise ValueError("geometry losses need a GeomTarget with a plan")

    vals = geom.plan.sample(pred_data)
    pos = decode_positions(geom.frames, vals)
    dpos = np.zeros_like(pos)
    if weights.lambda_normal > 0.0:
        ln, dp, _ = normal_term(pos, geom.triangles, geom.gt_normals)
        parts["normal"] = ln
        total += weights.lambda_normal * ln
        dpos += weights.lambda_normal * dp
    if weights.lambda_edge > 0.0:
        le, dp = edge_term(pos, geom.edges, geom.gt_edge_lengths)
        parts["edge"] = le
        total += weights.lambda_edge * le
        dpos += weights.lambda_edge * dp
    dvals = decode_positions_vjp(geom.frames, dpos)
    dpred += geom.plan.vjp(dvals)
    return total, parts, dpred


def vector_objective(pred_vals, target_vals, weights, geom=None):
    """Total loss and gradient w.r.t. predicted per-vertex offsets (n, 3).

    The pixel norm is applied per vertex instead of per raster pixel, so
    vector-output models train against the same three-term objective.
    """
    diff = pred_vals - target_vals
    per_vertex, dnorm = _pixel_norm_and_grad(diff, weights.pixel_norm)
    nv = len(pred_vals)
    total = float(per_vertex.sum()) / nv
    dpred = dnorm / nv
    parts = {"pixel": total, "normal": 0.0, "edge": 0.0}
    if weights.lambda_normal == 0.0 and weights.lambda_edge == 0.0:
        return total, parts, dpred
    if geom is None:
        raise ValueError("geometry losses need a GeomTarget")

    pos = decode_positions(geom.frames, pred_vals)
    dpos = np.zeros_like(pos)
    if weights.lambda_normal > 0.0:
        ln, dp, _ = normal_term(pos, geom.triangles, geom.gt_normals)
        parts["normal"] = ln
        total += weights.lambda_normal * ln
        dpos += weights.lambda_normal * dp
    if weights.lambda_edge > 0.0:
        le, dp = edge_term(pos, geom.edges, geom.gt_edge_lengths)
        parts["edge"] = le
        total += weights.lambda_edge * le
        dpos += weights.lambda_edge * dp
    dpred += decode_positions_vjp(geom.frames, dpos)
    return total, parts, dpred
