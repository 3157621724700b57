"""Cartesian cloth images: offset fields as multi-channel rasters.

A ClothImage stores per-pixel offset vectors on a uniform grid over a
chart's UV window, with a Boolean mask of valid pixels. Rasterization fills
pixels whose centers fall inside a UV triangle and then grows the mask by a
few rings of 8-neighbor averaging so bilinear lookups near the chart border
see only valid data. Vertices read back their offsets with bilinear
interpolation, so raster -> sample is exact for fields linear in UV and
second order accurate for smooth ones.

Single-chart garments use 3 channels. Two-chart garments (the tee) stack
front and back into 6 channels on aligned windows; the stored mask is the
intersection of the per-chart coverage so every masked pixel carries all six
valid values.

Grid convention: pixel (row i, col j) has center at
u = u0 + (j + 0.5) / W * (u1 - u0), v = v0 + (i + 0.5) / H * (v1 - v0),
row-major storage, rows along v.
"""

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .embedding import OffsetField

PAD_RINGS_DEFAULT = 4
PATCH_MARGIN = 16
MIN_RESOLUTION = 32
MAX_RESOLUTION = 1024

CIMG_MAGIC = b"CIMG"
CIMG_VERSION = 1


@dataclass
class ClothImage:
    """Raster of offset vectors (cm) with a validity mask.

    data: (H, W, C) float64, C = 3 per chart layer; mask: (H, W) bool;
    uv_windows: one (u0, v0, u1, v1) per layer; charts: chart id per layer.
    """

    data: np.ndarray
    mask: np.ndarray
    uv_windows: tuple
    charts: tuple = (0,)
    frame_mode: str = "local-tbn"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 3:
            raise ValueError("image data must be (H, W, C)")
        if self.channels not in (3, 6):
            raise ValueError("channels must be 3 or 6, got %d" % self.channels)
        if self.mask.shape != self.data.shape[:2]:
            raise ValueError("mask shape %s does not match image %s"
                             % (self.mask.shape, self.data.shape[:2]))
        if not np.isfinite(self.data).all():
            raise ValueError("image data must be finite")
        self.uv_windows = tuple(tuple(float(x) for x in w)
                                for w in self.uv_windows)
        self.charts = tuple(int(c) for c in self.charts)
        if len(self.uv_windows) != self.channels // 3:
            raise ValueError("need one uv window per 3-channel layer")
        if len(self.charts) != len(self.uv_windows):
            raise ValueError("need one chart id per layer")
        for w in self.uv_windows:
            u0, v0, u1, v1 = w
            if not (0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0):
                raise ValueError("uv window %s not inside [0,1]^2" % (w,))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def layer(self, chart):
        """3-channel slice and uv window for one chart."""
        k = self.charts.index(chart)
        return self.data[:, :, 3 * k:3 * k + 3], self.uv_windows[k]


def _as_resolution(resolution):
    if np.isscalar(resolution):
        w = h = int(resolution)
    else:
        w, h = (int(x) for x in resolution)
    for side in (w, h):
        if not MIN_RESOLUTION <= side <= MAX_RESOLUTION:
            raise ValueError("resolution %d outside [%d, %d]"
                             % (side, MIN_RESOLUTION, MAX_RESOLUTION))
    return w, h


def _uv_to_pixel(uv, window, width, height):
    """UV coordinates to pixel-center grid coordinates (x=col, y=row)."""
    u0, v0, u1, v1 = window
    x = (uv[:, 0] - u0) / (u1 - u0) * width - 0.5
    y = (uv[:, 1] - v0) / (v1 - v0) * height - 0.5
    return np.stack([x, y], axis=1)


def _dilate_rings(data, mask, rings):
    """Grow the mask by averaging masked 8-neighbors, ``rings`` passes.

    Synchronous update: every pass reads the mask state from the start of
    the pass, so the result is independent of traversal order.
    """
    h, w = mask.shape
    for _ in range(rings):
        acc = np.zeros_like(data)
        cnt = np.zeros((h, w), dtype=np.float64)
        src = np.where(mask[:, :, None], data, 0.0)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                ts = slice(max(di, 0), h + min(di, 0))
                ss = slice(max(-di, 0), h + min(-di, 0))
                tc = slice(max(dj, 0), w + min(dj, 0))
                sc = slice(max(-dj, 0), w + min(-dj, 0))
                acc[ts, tc] += src[ss, sc]
                cnt[ts, tc] += mask[ss, sc]
        grow = (~mask) & (cnt > 0)
        data = np.where(grow[:, :, None], acc / np.maximum(cnt, 1.0)[:, :, None], data)
        mask = mask | grow
    return data, mask


def rasterize(field, cloth, resolution, pad_rings=PAD_RINGS_DEFAULT):
    """Rasterize a per-vertex offset field into a ClothImage.

    ``field`` is an OffsetField or an (n_vertices, 3) array. One chart gives
    a 3-channel image; exactly two charts give a 6-channel image with the
    mask intersected so all channels are valid together.
    """
    if isinstance(field, OffsetField):
        values = field.values
        frame_mode = field.frame_mode
    else:
        values = np.asarray(field, dtype=np.float64)
        frame_mode = "local-tbn"
    if values.shape != (cloth.n_vertices, 3):
        raise ValueError("field shape %s does not match mesh with %d vertices"
                         % (values.shape, cloth.n_vertices))
    width, height = _as_resolution(resolution)
    chart_ids = [int(c) for c in np.unique(cloth.chart_id)]
    if len(chart_ids) > 2:
        raise ValueError("at most two charts supported, mesh has %d"
                         % len(chart_ids))

    layers = []
    masks = []
    windows = []
    margin_px = pad_rings + 1
    if width <= 2 * margin_px + 1 or height <= 2 * margin_px + 1:
        raise ValueError("resolution too small for pad_rings=%d" % pad_rings)
    for chart in chart_ids:
        u0, v0, u1, v1 = cloth.chart_uv_window(chart)
        # Align the chart box onto pixel centers, with a margin of whole
        # pixels around it: border vertices then sit exactly on pixel
        # centers, so their bilinear footprints carry no weight on the
        # padded ring and grid lookups reproduce linear fields exactly.
        su = (u1 - u0) / (width - 1 - 2 * margin_px)
        sv = (v1 - v0) / (height - 1 - 2 * margin_px)
        window = (u0 - (margin_px + 0.5) * su, v0 - (margin_px + 0.5) * sv,
                  u1 + (margin_px + 0.5) * su, v1 + (margin_px + 0.5) * sv)
        if window[0] < 0.0 or window[1] < 0.0 or window[2] > 1.0 or window[3] > 1.0:
            raise ValueError(
                "chart %d uv box %s too close to the [0,1] border to pad "
                "%d rings at %dx%d" % (chart, (u0, v0, u1, v1), pad_rings,
                                       width, height))
        pix = _uv_to_pixel(cloth.uv, window, width, height)
        tri_sel = cloth.chart_id[cloth.triangles[:, 0]] == chart
        tris = np.ascontiguousarray(cloth.triangles[tri_sel])
        data, mask, owner, conflicts = kernels.rasterize_tris(
            np.ascontiguousarray(pix), tris,
            np.ascontiguousarray(values), height, width)
        if len(conflicts):
            r, c, old, new = conflicts[0]
            raise ValueError(
                "overlapping UV triangles in chart %d: pixel (%d, %d) interior"
                " to triangles %d and %d" % (chart, r, c, old, new))
        data, mask = _dilate_rings(data, mask.astype(bool), pad_rings)
        layers.append(data)
        masks.append(mask)
        windows.append(window)

    full = np.concatenate(layers, axis=2)
    mask = masks[0]
    for m in masks[1:]:
        mask = mask & m
    return ClothImage(full, mask, tuple(windows), tuple(chart_ids), frame_mode)


def sample_at_uv(img, uv, chart_id=None):
    """Bilinear lookup of the image at vertex UV coordinates.

    chart_id (per vertex) is required for 6-channel images. Every pixel in a
    vertex's 2x2 bilinear footprint must be masked; a miss means rasterize
    needs more pad_rings.
    """
    uv = np.asarray(uv, dtype=np.float64)
    if img.channels == 6:
        if chart_id is None:
            raise ValueError("chart_id required for 6-channel images")
        chart_id = np.asarray(chart_id)
    else:
        chart_id = np.full(len(uv), img.charts[0])

    out = np.empty((len(uv), 3), dtype=np.float64)
    for chart in img.charts:
        sel = np.nonzero(chart_id == chart)[0]
        if not len(sel):
            continue
        layer, window = img.layer(chart)
        pix = _uv_to_pixel(uv[sel], window, img.width, img.height)
        x, y = pix[:, 0], pix[:, 1]
        j0 = np.floor(x).astype(np.int64)
        i0 = np.floor(y).astype(np.int64)
        fx = x - j0
        fy = y - i0
        acc = np.zeros((len(sel), 3), dtype=np.float64)
        bad = np.zeros(len(sel), dtype=bool)
        # corners with numerically zero weight may fall off the grid or on
        # unmasked pixels (vertices on the chart border sit exactly on pixel
        # centers); only corners that actually contribute are required
        for di, dj, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                          (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            ii = i0 + di
            jj = j0 + dj
            inb = (ii >= 0) & (ii < img.height) & (jj >= 0) & (jj < img.width)
            ok = inb.copy()
            ok[inb] &= img.mask[ii[inb], jj[inb]]
            live = w > 1e-12
            bad |= live & ~ok
            use = live & ok
            acc[use] += w[use, None] * layer[ii[use], jj[use]]
        if bad.any():
            v = int(sel[np.nonzero(bad)[0][0]])
            raise ValueError(
                "bilinear footprint of vertex %d touches unmasked pixels; "
                "rasterize with more pad_rings" % v)
        out[sel] = acc
    return OffsetField(out, img.frame_mode)


# ---------------------------------------------------------------------------
# patch cropping and stitching


@dataclass(frozen=True)
class PatchSpec:
    """Crop window in source-grid pixels with a fixed context margin."""

    patch_id: int
    chart: int
    x0: int
    y0: int
    width: int
    height: int
    margin: int = PATCH_MARGIN

    def __post_init__(self):
        if self.margin != PATCH_MARGIN:
            raise ValueError("patch margin is fixed at %d" % PATCH_MARGIN)
        if self.width <= 2 * self.margin or self.height <= 2 * self.margin:
            raise ValueError("patch smaller than twice its margin")


def crop_patch(img, spec):
    """Copy a patch crop out of a high-res image as a 3-channel ClothImage."""
    if (spec.x0 < 0 or spec.y0 < 0 or spec.x0 + spec.width > img.width
            or spec.y0 + spec.height > img.height):
        raise ValueError("patch %d crop outside the %dx%d image"
                         % (spec.patch_id, img.width, img.height))
    layer, window = img.layer(spec.chart)
    u0, v0, u1, v1 = window
    sub = (u0 + spec.x0 / img.width * (u1 - u0),
           v0 + spec.y0 / img.height * (v1 - v0),
           u0 + (spec.x0 + spec.width) / img.width * (u1 - u0),
           v0 + (spec.y0 + spec.height) / img.height * (v1 - v0))
    rows = slice(spec.y0, spec.y0 + spec.height)
    cols = slice(spec.x0, spec.x0 + spec.width)
    return ClothImage(layer[rows, cols].copy(), img.mask[rows, cols].copy(),
                      (sub,), (spec.chart,), img.frame_mode)


def _patch_interior_uv(spec, patch):
    """UV rectangle owned by a patch: its crop window minus the margin ring."""
    u0, v0, u1, v1 = patch.uv_windows[0]
    du = (u1 - u0) / patch.width
    dv = (v1 - v0) / patch.height
    return (u0 + spec.margin * du, v0 + spec.margin * dv,
            u1 - spec.margin * du, v1 - spec.margin * dv)


def stitch_patches(cloth, specs, patches):
    """Per-vertex offsets from a set of patch images.

    Each vertex is sampled from the patch that owns it: the one whose
    interior region (crop minus margin) contains the vertex UV, lowest
    patch id on ties.
    """
    if len(specs) != len(patches):
        raise ValueError("got %d specs for %d patches" % (len(specs), len(patches)))
    order = np.argsort([s.patch_id for s in specs], kind="stable")
    out = np.empty((cloth.n_vertices, 3), dtype=np.float64)
    owned = np.zeros(cloth.n_vertices, dtype=bool)
    frame_mode = patches[0].frame_mode if patches else "local-tbn"
    for k in order:
        spec, patch = specs[k], patches[k]
        ua, va, ub, vb = _patch_interior_uv(spec, patch)
        cand = ((cloth.chart_id == spec.chart) & ~owned
                & (cloth.uv[:, 0] >= ua) & (cloth.uv[:, 0] <= ub)
                & (cloth.uv[:, 1] >= va) & (cloth.uv[:, 1] <= vb))
        idx = np.nonzero(cand)[0]
        if not len(idx):
            continue
        out[idx] = sample_at_uv(patch, cloth.uv[idx]).values
        owned[idx] = True
    if not owned.all():
        missing = np.nonzero(~owned)[0]
        raise ValueError("%d vertices not covered by any patch interior, "
                         "e.g. %s" % (len(missing), missing[:8].tolist()))
    return OffsetField(out, frame_mode)


def specs_for_patches(img, cloth, patch_vertex_groups, size=160,
                      margin=PATCH_MARGIN):
    """Crops covering each vertex group, centered on its UV bounding box.

    patch_vertex_groups: iterable of vertex-index arrays (cage patches).
    Crops default to size x size pixels of the source image and grow per
    axis when a group plus its context margin does not fit; they are
    clamped inside the image. Groups that reach the chart border need the
    source rasterized with pad_rings >= margin, so that the window margin
    itself is at least margin pixels wide; otherwise border vertices would
    sit inside every crop's excluded margin ring and own nothing.
    """
    specs = []
    for pid, verts in enumerate(patch_vertex_groups):
        verts = np.asarray(verts)
        chart = int(cloth.chart_id[verts[0]])
        if (cloth.chart_id[verts] != chart).any():
            raise ValueError("patch %d spans multiple charts" % pid)
        _, window = img.layer(chart)
        pix = _uv_to_pixel(cloth.uv[verts], window, img.width, img.height)
        w = max(size, int(np.ceil(pix[:, 0].max() - pix[:, 0].min())) + 2 * margin + 2)
        h = max(size, int(np.ceil(pix[:, 1].max() - pix[:, 1].min())) + 2 * margin + 2)
        if w > img.width or h > img.height:
            raise ValueError("patch %d needs a %dx%d crop but the image is "
                             "%dx%d" % (pid, w, h, img.width, img.height))
        x0 = int(round(0.5 * (pix[:, 0].min() + pix[:, 0].max()) - w / 2.0))
        y0 = int(round(0.5 * (pix[:, 1].min() + pix[:, 1].max()) - h / 2.0))
        x0 = min(max(x0, 0), img.width - w)
        y0 = min(max(y0, 0), img.height - h)
        # same ownership test stitch_patches will apply: every group vertex
        # must land in the crop minus its margin ring
        u0, v0, u1, v1 = window
        ua = u0 + (x0 + margin) / img.width * (u1 - u0)
        ub = u0 + (x0 + w - margin) / img.width * (u1 - u0)
        va = v0 + (y0 + margin) / img.height * (v1 - v0)
        vb = v0 + (y0 + h - margin) / img.height * (v1 - v0)
        uv = cloth.uv[verts]
        inside = ((uv[:, 0] >= ua) & (uv[:, 0] <= ub)
                  & (uv[:, 1] >= va) & (uv[:, 1] <= vb))
        if not inside.all():
            raise ValueError(
                "patch %d has vertices inside the crop margin ring; rasterize "
                "the source with pad_rings >= %d" % (pid, margin))
        specs.append(PatchSpec(pid, chart, x0, y0, w, h, margin))
    return specs


# ---------------------------------------------------------------------------
# image edits


@dataclass(frozen=True)
class ChannelScale:
    channel: int
    factor: float


@dataclass(frozen=True)
class ChannelOffset:
    channel: int
    delta: float


@dataclass(frozen=True)
class Blend:
    """Blend another image in over a pixel rectangle (x0, y0, w, h)."""

    other: ClothImage
    region: tuple
    alpha: float


@dataclass(frozen=True)
class Brush:
    """Add delta to one channel inside a circular footprint (pixels)."""

    center: tuple
    radius: float
    delta: float
    channel: int


def _check_channel(img, channel):
    if not 0 <= channel < img.channels:
        raise ValueError("channel %d out of range for %d-channel image"
                         % (channel, img.channels))


def edit_image(img, op):
    """Apply one edit on masked pixels; the mask never changes."""
    data = img.data.copy()
    m = img.mask
    if isinstance(op, ChannelScale):
        _check_channel(img, op.channel)
        data[:, :, op.channel] = np.where(m, data[:, :, op.channel] * op.factor,
                                          data[:, :, op.channel])
    elif isinstance(op, ChannelOffset):
        _check_channel(img, op.channel)
        data[:, :, op.channel] = np.where(m, data[:, :, op.channel] + op.delta,
                                          data[:, :, op.channel])
    elif isinstance(op, Blend):
        x0, y0, w, h = (int(v) for v in op.region)
        if x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
            raise ValueError("blend region outside image")
        if op.other.data.shape != img.data.shape:
            raise ValueError("blend source shape %s != target %s"
                             % (op.other.data.shape, img.data.shape))
        rows = slice(y0, y0 + h)
        cols = slice(x0, x0 + w)
        sub = m[rows, cols][:, :, None]
        data[rows, cols] = np.where(
            sub, (1.0 - op.alpha) * data[rows, cols]
            + op.alpha * op.other.data[rows, cols], data[rows, cols])
    elif isinstance(op, Brush):
        _check_channel(img, op.channel)
        cx, cy = op.center
        if not (0 <= cx < img.width and 0 <= cy < img.height):
            raise ValueError("brush center outside image")
        yy, xx = np.mgrid[0:img.height, 0:img.width]
        foot = ((xx - cx) ** 2 + (yy - cy) ** 2 <= op.radius ** 2) & m
        data[:, :, op.channel][foot] += op.delta
    else:
        raise TypeError("unknown edit op %r" % (op,))
    return replace(img, data=data)


# ---------------------------------------------------------------------------
# PNG export/import with sidecar


def export_png(img, path):
    """8-bit preview: per-channel min-max to [0,255], mask in alpha.

    6-channel images write front and back side by side, doubling the width.
    A sidecar JSON next to the image records per-channel ranges so
    import_png can undo the normalization (within quantization).
    """
    from PIL import Image

    side = {"width": img.width, "height": img.height,
            "channels": img.channels,
            "uv_windows": [list(w) for w in img.uv_windows],
            "charts": list(img.charts),
            "frame_mode": img.frame_mode, "ranges": []}
    quant = np.zeros((img.height, img.width, img.channels), dtype=np.uint8)
    for c in range(img.channels):
        vals = img.data[:, :, c][img.mask]
        lo = float(vals.min()) if len(vals) else 0.0
        hi = float(vals.max()) if len(vals) else 0.0
        zero_range = not hi > lo
        if zero_range:
            q = np.full((img.height, img.width), 128, dtype=np.uint8)
        else:
            q = np.clip(np.rint((img.data[:, :, c] - lo) / (hi - lo) * 255.0),
                        0, 255).astype(np.uint8)
        quant[:, :, c] = np.where(img.mask, q, 0)
        side["ranges"].append({"min": lo, "max": hi, "zero_range": zero_range})

    alpha = np.where(img.mask, 255, 0).astype(np.uint8)
    if img.channels == 3:
        rgba = np.dstack([quant, alpha])
    else:
        left = np.dstack([quant[:, :, :3], alpha])
        right = np.dstack([quant[:, :, 3:], alpha])
        rgba = np.concatenate([left, right], axis=1)
    Image.fromarray(rgba, mode="RGBA").save(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, sort_keys=True, indent=1)


def import_png(path):
    """Invert export_png using the sidecar; error within range/510."""
    from PIL import Image

    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    rgba = np.asarray(Image.open(path).convert("RGBA"))
    w, h, c = side["width"], side["height"], side["channels"]
    if c == 3:
        quant = rgba[:, :, :3].astype(np.float64)
        mask = rgba[:, :, 3] > 0
    else:
        quant = np.concatenate([rgba[:, :w, :3], rgba[:, w:, :3]],
                               axis=2).astype(np.float64)
        mask = rgba[:, :w, 3] > 0
    data = np.zeros((h, w, c), dtype=np.float64)
    for k, rng in enumerate(side["ranges"]):
        if rng["zero_range"]:
            data[:, :, k] = np.where(mask, rng["min"], 0.0)
        else:
            data[:, :, k] = np.where(
                mask, rng["min"] + quant[:, :, k] / 255.0
                * (rng["max"] - rng["min"]), 0.0)
    return ClothImage(data, mask, tuple(tuple(x) for x in side["uv_windows"]),
                      tuple(side["charts"]), side["frame_mode"])


# ---------------------------------------------------------------------------
# binary raster format


def save_cimg(img, path):
    """CIMG: magic, u16 version, u32 w/h/c, f32 LE data, u8 mask."""
    with open(path, "wb") as fh:
        fh.write(CIMG_MAGIC)
        fh.write(struct.pack("<HIII", CIMG_VERSION, img.width, img.height,
                             img.channels))
        fh.write(np.ascontiguousarray(img.data, dtype="<f4").tobytes())
        fh.write(img.mask.astype(np.uint8).tobytes())


def load_cimg(path, uv_windows=None, charts=None, frame_mode="local-tbn"):
    """Read a CIMG raster; window/chart metadata is supplied by the caller
    (the format stores only the raster)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CIMG_MAGIC:
        raise ValueError("not a CIMG file: bad magic %r" % blob[:4])
    version, w, h, c = struct.unpack_from("<HIII", blob, 4)
    if version != CIMG_VERSION:
        raise ValueError("unsupported CIMG version %d" % version)
    off = 4 + struct.calcsize("<HIII")
    n = h * w * c
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
    data = data.astype(np.float64).reshape(h, w, c)
    mask = np.frombuffer(blob, dtype=np.uint8, count=h * w,
                         offset=off + 4 * n).reshape(h, w).astype(bool)
    if uv_windows is None:
        uv_windows = tuple((0.0, 0.0, 1.0, 1.0) for _ in range(c // 3))
    if charts is None:
        charts = tuple(range(c // 3))
    return ClothImage(data, mask, tuple(uv_windows), tuple(charts), frame_mode)
