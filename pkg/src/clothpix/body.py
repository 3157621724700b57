"""Procedural capsule-union body with linear blend skinning.

The body replaces a scanned and rigged human: three overlapping watertight
part meshes (torso, left arm, right arm), each a revolve surface around a
straight bone axis, with every vertex lying exactly on the analytic
capsule-union level set of its part. The level set doubles as the collision
proxy for garment pushout and pose pruning.

Units are cm, y is up, T-pose arms point along +-x.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .meshcore import TriMesh
from .skeleton import Skeleton, forward_kinematics, identity_pose, make_tee_skeleton

TORSO, LEFT_ARM, RIGHT_ARM = 0, 1, 2


@dataclass
class Capsule:
    name: str
    p0: np.ndarray
    p1: np.ndarray
    radius: float
    part: int


class CapsuleSurface:
    """Union of capsules; signed distance, gradient, and projection."""

    def __init__(self, capsules):
        self.capsules = list(capsules)
        self._a = np.array([c.p0 for c in self.capsules], dtype=np.float64)
        self._b = np.array([c.p1 for c in self.capsules], dtype=np.float64)
        self._r = np.array([c.radius for c in self.capsules], dtype=np.float64)

    def subset(self, parts):
        return CapsuleSurface([c for c in self.capsules if c.part in parts])

    def _closest_on_segments(self, points):
        """(n,k,3) closest point on every capsule axis segment."""
        p = np.asarray(points, dtype=np.float64)[:, None, :]
        ab = (self._b - self._a)[None, :, :]
        denom = np.einsum("nkj,nkj->nk", ab, ab)
        t = np.einsum("nkj,nkj->nk", p - self._a[None], ab) / np.maximum(denom, 1e-30)
        t = np.clip(t, 0.0, 1.0)
        return self._a[None] + t[..., None] * ab

    def sdf(self, points):
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        closest = self._closest_on_segments(p)
        d = np.linalg.norm(p[:, None, :] - closest, axis=2) - self._r[None, :]
        out = d.min(axis=1)
        return float(out[0]) if single else out

    def sdf_grad(self, points):
        """Signed distance and unit gradient (outward) per point.

        On a capsule axis the direction is degenerate; a deterministic
        perpendicular to the axis is substituted (global x projected out,
        then y).
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        closest = self._closest_on_segments(p)
        diff = p[:, None, :] - closest
        dist = np.linalg.norm(diff, axis=2)
        d = dist - self._r[None, :]
        k = d.argmin(axis=1)
        rows = np.arange(len(p))
        g = diff[rows, k]
        gn = dist[rows, k]
        for i in np.nonzero(gn < 1e-12)[0]:
            axis = self._b[k[i]] - self._a[k[i]]
            axis = axis / max(np.linalg.norm(axis), 1e-30)
            for cand in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)):
                perp = np.asarray(cand) - axis * (axis @ cand)
                if np.linalg.norm(perp) > 1e-10:
                    g[i] = perp
                    gn[i] = np.linalg.norm(perp)
                    break
        g = g / np.maximum(gn, 1e-30)[:, None]
        return d[rows, k], g

    def pushout(self, points, tol=1e-6, max_iter=20):
        """Move penetrating points out to the surface; others untouched."""
        p = np.array(points, dtype=np.float64)
        for _ in range(max_iter):
            d, g = self.sdf_grad(p)
            inside = d < -tol
            if not inside.any():
                break
            p[inside] -= d[inside, None] * g[inside]
        return p

    def project(self, points, tol=1e-9, max_iter=30):
        """Two-sided projection onto the zero level set."""
        p = np.array(points, dtype=np.float64)
        for _ in range(max_iter):
            d, g = self.sdf_grad(p)
            off = np.abs(d) > tol
            if not off.any():
                break
            p[off] -= d[off, None] * g[off]
        return p


def pushout(positions, body, tol=1e-6):
    """Push garment vertices out of the body's analytic level set."""
    return body.surface.pushout(positions, tol=tol)


# ---------------------------------------------------------------------------
# body construction

DEFAULT_RADII = {
    "pelvis": 15.0,
    "belly": 13.5,
    "chest": 14.5,
    "collar": 10.0,
    "neck": 5.5,
    "head": 8.0,
    "upper_arm": 5.5,
    "forearm": 4.5,
}

# capsule axis spans: (name, t0, t1) in the part's axis coordinate
_TORSO_SPANS = [
    ("pelvis", 92.0, 110.0),
    ("belly", 110.0, 124.0),
    ("chest", 126.0, 140.0),
    ("collar", 140.0, 146.0),
    ("neck", 146.0, 158.0),
    ("head", 158.0, 166.0),
]
_ARM_SPANS = [
    ("upper_arm", 12.0, 34.0),
    ("forearm", 34.0, 56.0),
]

# cap extension beyond the last capsule end, in units of the unscaled end
# radius; 0.45 keeps end rings non-degenerate down to thickness_scale 0.5
_CAP_EXT = 0.45

_PART_AXES = {
    TORSO: {"origin": (0.0, 0.0, 0.0), "axis": (0.0, 1.0, 0.0),
            "e1": (0.0, 0.0, 1.0), "e2": (1.0, 0.0, 0.0)},
    LEFT_ARM: {"origin": (0.0, 144.0, 0.0), "axis": (1.0, 0.0, 0.0),
               "e1": (0.0, 1.0, 0.0), "e2": (0.0, 0.0, 1.0)},
    RIGHT_ARM: {"origin": (0.0, 144.0, 0.0), "axis": (-1.0, 0.0, 0.0),
                "e1": (0.0, 1.0, 0.0), "e2": (0.0, 0.0, -1.0)},
}

# capsule pairs from different parts that are allowed to interpenetrate:
# any torso capsule with an upper-arm capsule (the shoulder region)
def _overlap_allowed(c1, c2):
    names = {c1.name.split(":")[-1], c2.name.split(":")[-1]}
    return "upper_arm" in names


@dataclass
class BodyConfig:
    thickness_scale: float = 1.0
    n_seg: int = 24
    ring_spacing: float = 2.0
    radii: dict = field(default_factory=lambda: dict(DEFAULT_RADII))

    def to_json(self):
        return {"thickness_scale": self.thickness_scale, "n_seg": self.n_seg,
                "ring_spacing": self.ring_spacing, "radii": dict(self.radii)}

    @staticmethod
    def from_json(doc):
        return BodyConfig(thickness_scale=float(doc["thickness_scale"]),
                          n_seg=int(doc["n_seg"]),
                          ring_spacing=float(doc["ring_spacing"]),
                          radii={k: float(v) for k, v in doc["radii"].items()})


@dataclass
class BodyModel:
    mesh: TriMesh
    skeleton: Skeleton
    weight_joints: np.ndarray   # (V,4) joint indices
    weight_values: np.ndarray   # (V,4) nonneg, rows sum to 1
    part_id: np.ndarray         # (V,)
    surface: CapsuleSurface
    torso_surface: CapsuleSurface
    arm_probe_vertices: np.ndarray
    config: BodyConfig
    rest_transforms: object = None

    def __post_init__(self):
        if self.rest_transforms is None:
            self.rest_transforms = forward_kinematics(
                self.skeleton, identity_pose(self.skeleton))

    def content_hash(self):
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_json(), sort_keys=True).encode())
        for arr in (self.mesh.vertices, self.mesh.triangles, self.mesh.uv,
                    self.weight_joints, self.weight_values, self.part_id):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def surface_point(self, part, t, theta):
        """Analytic point on the part's level set at axial t, angle theta."""
        ax = _PART_AXES[part]
        o = np.asarray(ax["origin"])
        u = np.asarray(ax["axis"])
        e1 = np.asarray(ax["e1"])
        e2 = np.asarray(ax["e2"])
        r = self.radial_distance(part, t)
        t = np.asarray(t, dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        return (o + np.multiply.outer(t, u)
                + (r * np.cos(theta))[..., None] * e1
                + (r * np.sin(theta))[..., None] * e2)

    def radial_distance(self, part, t):
        """Distance from the part axis to the union surface at axial t."""
        return _radial_distance(part, t, self.config)


def _radial_distance(part, t, config):
    """Axis-to-surface distance of the capsule union at axial coordinate t."""
    spans = _TORSO_SPANS if part == TORSO else _ARM_SPANS
    ts = config.thickness_scale
    t = np.asarray(t, dtype=np.float64)
    best = np.zeros(t.shape if t.ndim else ())
    for name, a, b in spans:
        r = config.radii[name] * ts
        inside = (t >= a) & (t <= b)
        over = np.where(t > b, t - b, np.where(t < a, a - t, 0.0))
        cap = np.sqrt(np.maximum(r * r - over * over, 0.0))
        best = np.maximum(best, np.where(inside, r, cap))
    return best


def _part_capsules(part, config):
    ax = _PART_AXES[part]
    o = np.asarray(ax["origin"])
    u = np.asarray(ax["axis"])
    spans = _TORSO_SPANS if part == TORSO else _ARM_SPANS
    prefix = {TORSO: "torso", LEFT_ARM: "l_arm", RIGHT_ARM: "r_arm"}[part]
    caps = []
    for name, a, b in spans:
        caps.append(Capsule(name="%s:%s" % (prefix, name),
                            p0=o + a * u, p1=o + b * u,
                            radius=config.radii[name] * config.thickness_scale,
                            part=part))
    return caps


def _segment_distance(p0, p1, q0, q1):
    """Minimum distance between two 3D segments."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0, 1) if denom > 1e-12 else 0.0
    t = (b * s + f) / e if e > 1e-12 else 0.0
    if t < 0:
        t = 0.0
        s = np.clip(-c / a, 0, 1) if a > 1e-12 else 0.0
    elif t > 1:
        t = 1.0
        s = np.clip((b - c) / a, 0, 1) if a > 1e-12 else 0.0
    return np.linalg.norm((p0 + s * d1) - (q0 + t * d2))


def _check_no_rogue_overlaps(capsules):
    bad = []
    for i in range(len(capsules)):
        for j in range(i + 1, len(capsules)):
            c1, c2 = capsules[i], capsules[j]
            if c1.part == c2.part or _overlap_allowed(c1, c2):
                continue
            d = _segment_distance(c1.p0, c1.p1, c2.p0, c2.p1)
            if d < c1.radius + c2.radius:
                bad.append((c1.name, c2.name))
    if bad:
        raise ValueError("capsule overlap beyond shoulders: %s" % bad)


def _build_part_mesh(part, config):
    """Revolve tube with flat end caps, vertices on the part's level set.

    Ring axial positions are independent of thickness_scale so thickness
    variants share topology and differ only radially. Cylindrical UV; the
    wrap seam shares vertices, so these charts are watertight but not
    rasterization-grade (the garment charts are the ones turned into
    images).
    """
    ax = _PART_AXES[part]
    o = np.asarray(ax["origin"])
    u = np.asarray(ax["axis"])
    e1 = np.asarray(ax["e1"])
    e2 = np.asarray(ax["e2"])
    spans = _TORSO_SPANS if part == TORSO else _ARM_SPANS
    t_lo = spans[0][1] - _CAP_EXT * DEFAULT_RADII[spans[0][0]]
    t_hi = spans[-1][2] + _CAP_EXT * DEFAULT_RADII[spans[-1][0]]
    n_rings = max(int(round((t_hi - t_lo) / config.ring_spacing)) + 1, 4)
    n_seg = config.n_seg

    tvals = np.linspace(t_lo, t_hi, n_rings)
    thetas = 2.0 * np.pi * np.arange(n_seg) / n_seg - np.pi
    verts = []
    uvs = []
    for i, t in enumerate(tvals):
        r = _radial_distance(part, t, config)
        for k, th in enumerate(thetas):
            verts.append(o + t * u + r * (np.cos(th) * e1 + np.sin(th) * e2))
            uvs.append((k / n_seg, i / (n_rings - 1)))
    pole_lo = len(verts)
    verts.append(o + t_lo * u)
    uvs.append((0.0, 0.0))
    pole_hi = len(verts)
    verts.append(o + t_hi * u)
    uvs.append((0.0, 1.0))

    tris = []
    for i in range(n_rings - 1):
        for k in range(n_seg):
            a = i * n_seg + k
            b = i * n_seg + (k + 1) % n_seg
            c = (i + 1) * n_seg + k
            d = (i + 1) * n_seg + (k + 1) % n_seg
            tris.append((a, b, c))
            tris.append((b, d, c))
    for k in range(n_seg):
        a = k
        b = (k + 1) % n_seg
        tris.append((pole_lo, b, a))
        a = (n_rings - 1) * n_seg + k
        b = (n_rings - 1) * n_seg + (k + 1) % n_seg
        tris.append((pole_hi, a, b))
    return np.asarray(verts), np.asarray(tris), np.asarray(uvs)


_BONES = [
    # joint name -> world rest segment it drives
    ("hips", (0.0, 92.0, 0.0), (0.0, 110.0, 0.0)),
    ("lower_back", (0.0, 110.0, 0.0), (0.0, 122.0, 0.0)),
    ("spine", (0.0, 122.0, 0.0), (0.0, 134.0, 0.0)),
    ("spine1", (0.0, 134.0, 0.0), (0.0, 146.0, 0.0)),
    ("neck", (0.0, 146.0, 0.0), (0.0, 154.0, 0.0)),
    ("neck1", (0.0, 154.0, 0.0), (0.0, 166.0, 0.0)),
    ("l_shoulder", (10.0, 144.0, 0.0), (34.0, 144.0, 0.0)),
    ("l_arm", (34.0, 144.0, 0.0), (58.0, 144.0, 0.0)),
    ("r_shoulder", (-10.0, 144.0, 0.0), (-34.0, 144.0, 0.0)),
    ("r_arm", (-34.0, 144.0, 0.0), (-58.0, 144.0, 0.0)),
]


def _point_segment_distance(points, a, b):
    ab = b - a
    t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def _skin_weights(verts, skeleton):
    """Inverse-distance-to-bone weights, top 4 influences, renormalized."""
    nj = skeleton.n_joints
    dists = np.empty((len(verts), nj))
    for name, a, b in _BONES:
        j = skeleton.joint_index(name)
        dists[:, j] = _point_segment_distance(verts, np.asarray(a), np.asarray(b))
    raw = 1.0 / (dists ** 4 + 1e-6)
    order = np.argsort(-raw, axis=1)[:, :4]
    rows = np.arange(len(verts))[:, None]
    vals = raw[rows, order]
    vals = vals / vals.sum(axis=1, keepdims=True)
    return order.astype(np.int64), vals


def build_procedural_body(config=None):
    """Assemble the three-part body, its skin weights, and collision proxy.

    Deterministic for a fixed config. Raises when scaled capsules from
    different parts interpenetrate anywhere but the shoulder region.
    """
    if config is None:
        config = BodyConfig()
    if not 0.5 <= config.thickness_scale <= 2.0:
        raise ValueError("thickness_scale must be in [0.5, 2.0]")
    if any(r <= 0 for r in config.radii.values()):
        raise ValueError("radii must be positive")

    capsules = []
    for part in (TORSO, LEFT_ARM, RIGHT_ARM):
        capsules += _part_capsules(part, config)
    _check_no_rogue_overlaps(capsules)

    all_v, all_t, all_uv, all_chart = [], [], [], []
    offset = 0
    for part in (TORSO, LEFT_ARM, RIGHT_ARM):
        v, t, uv = _build_part_mesh(part, config)
        all_v.append(v)
        all_t.append(t + offset)
        all_uv.append(uv)
        all_chart.append(np.full(len(v), part, dtype=np.int64))
        offset += len(v)
    verts = np.concatenate(all_v)
    tris = np.concatenate(all_t)
    uv = np.concatenate(all_uv)
    part_id = np.concatenate(all_chart)
    if len(verts) > 20000:
        raise ValueError("resolution too fine: %d vertices" % len(verts))
    mesh = TriMesh(verts, tris, uv, chart_id=part_id)

    skeleton = make_tee_skeleton()
    wj, wv = _skin_weights(verts, skeleton)

    surface = CapsuleSurface(capsules)
    probes = np.nonzero((part_id != TORSO) & (np.abs(verts[:, 0]) >= 40.0))[0]
    return BodyModel(mesh=mesh, skeleton=skeleton, weight_joints=wj,
                     weight_values=wv, part_id=part_id, surface=surface,
                     torso_surface=surface.subset({TORSO}),
                     arm_probe_vertices=probes, config=config)


# ---------------------------------------------------------------------------
# skinning and pose filters


def skin_lbs(body, pose, vertex_indices=None):
    """Linear blend skinning of the body's rest vertices under a pose."""
    fk = forward_kinematics(body.skeleton, pose)
    rest = body.rest_transforms
    rot = np.einsum("jab,jcb->jac", fk.rotations, rest.rotations)
    trans = fk.translations - np.einsum("jab,jb->ja", rot, rest.translations)

    verts = body.mesh.vertices
    wj = body.weight_joints
    wv = body.weight_values
    if vertex_indices is not None:
        verts = verts[vertex_indices]
        wj = wj[vertex_indices]
        wv = wv[vertex_indices]
    out = np.zeros_like(verts)
    for slot in range(wj.shape[1]):
        j = wj[:, slot]
        moved = np.einsum("vab,vb->va", rot[j], verts) + trans[j]
        out += wv[:, slot, None] * moved
    return out


def prune_pose(body, pose, tol=1e-3):
    """True (accept) unless a skinned arm probe sinks into the torso."""
    probes = skin_lbs(body, pose, vertex_indices=body.arm_probe_vertices)
    d = body.torso_surface.sdf(probes)
    return bool(d.min() >= -tol)


CORRUPT_MODES = ("arm-on-torso", "arm-on-torso-and-opposite-arm")


def corrupt_weights(body, mode):
    """Deliberately broken skin weights for the robustness experiments.

    Paints 0.5 of the left shoulder joint onto a deterministic 30% of the
    upper-left torso vertices (and, in the second mode, of the right arm
    too), then re-truncates to 4 influences and renormalizes.
    """
    if mode not in CORRUPT_MODES:
        raise ValueError("unknown corruption mode %r" % (mode,))
    verts = body.mesh.vertices
    region = (body.part_id == TORSO) & (verts[:, 1] >= 128.0) & (verts[:, 0] >= 0.0)
    if mode == "arm-on-torso-and-opposite-arm":
        region |= (body.part_id == RIGHT_ARM) & (verts[:, 0] <= -36.0)
    target = np.nonzero(region)[0]
    chosen = target[(np.arange(len(target)) * 3) % 10 < 3]

    j_sh = body.skeleton.joint_index("l_shoulder")
    nj = body.skeleton.n_joints
    wj = body.weight_joints.copy()
    wv = body.weight_values.copy()
    for v in chosen:
        dense = np.zeros(nj)
        dense[wj[v]] += wv[v] * 0.5
        dense[j_sh] += 0.5
        order = np.argsort(-dense)[:4]
        vals = dense[order]
        wj[v] = order
        wv[v] = vals / vals.sum()
    return BodyModel(mesh=body.mesh, skeleton=body.skeleton, weight_joints=wj,
                     weight_values=wv, part_id=body.part_id,
                     surface=body.surface, torso_surface=body.torso_surface,
                     arm_probe_vertices=body.arm_probe_vertices,
                     config=body.config, rest_transforms=body.rest_transforms)


# ---------------------------------------------------------------------------
# io


def save_body_config(path, config):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=1)


def load_body(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return build_procedural_body(BodyConfig.from_json(doc))
