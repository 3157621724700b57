"""Joint hierarchy, forward kinematics, and joint-limit pose sampling.

Conventions, fixed throughout the package: the body is y-up, faces +z, and
holds a T-pose with arms along +-x. Euler rotations are applied intrinsically
in the order x, z, y, i.e. R = Rx @ Rz @ Ry, so the z axis is the altitude
axis of a limb pointing along x. The root joint's rotation is always pinned
to the identity; its 9 feature entries are carried anyway so the pose feature
length stays n_joints * 9.
"""

import json
from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass
class Joint:
    name: str
    parent: int                       # -1 for the root
    rest_rotation: np.ndarray         # (3,3)
    rest_translation: np.ndarray      # (3,) cm, relative to parent
    limits: np.ndarray                # (3,2) [theta_neg, theta_pos] per x,z,y
    limb: bool = False                # True: sine-space altitude sampling


@dataclass
class Skeleton:
    joints: List[Joint]

    def __post_init__(self):
        roots = [i for i, j in enumerate(self.joints) if j.parent < 0]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("exactly one root joint required, at index 0")
        for i, j in enumerate(self.joints):
            if j.parent >= i:
                raise ValueError("joints must be in topological order")
            lim = np.asarray(j.limits, dtype=np.float64)
            if lim.shape != (3, 2) or (lim[:, 0] > 0).any() or (lim[:, 1] < 0).any():
                raise ValueError("limits must be (3,2) with neg <= 0 <= pos")
            j.limits = lim
            j.rest_rotation = np.asarray(j.rest_rotation, dtype=np.float64)
            j.rest_translation = np.asarray(j.rest_translation, dtype=np.float64)

    @property
    def n_joints(self):
        return len(self.joints)

    def joint_index(self, name):
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)


@dataclass
class Pose:
    """Per-joint rotation matrices, (J,3,3)."""

    rotations: np.ndarray

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[1:] != (3, 3):
            raise ValueError("rotations must be (J,3,3)")

    def validate(self, tol=1e-10):
        r = self.rotations
        eye = np.eye(3)
        for j in range(len(r)):
            if np.abs(r[j] @ r[j].T - eye).max() > tol:
                raise ValueError("rotation %d not orthonormal" % j)
            if abs(np.linalg.det(r[j]) - 1.0) > tol:
                raise ValueError("rotation %d determinant != 1" % j)

    @property
    def n_joints(self):
        return len(self.rotations)


def identity_pose(skeleton):
    return Pose(np.tile(np.eye(3), (skeleton.n_joints, 1, 1)))


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def euler_xzy(ax, az, ay):
    """Compose intrinsic x, z, y rotations: R = Rx @ Rz @ Ry."""
    return rot_x(ax) @ rot_z(az) @ rot_y(ay)


@dataclass
class JointTransforms:
    """World transforms per joint: x_world = R @ x_local + t."""

    rotations: np.ndarray   # (J,3,3)
    translations: np.ndarray  # (J,3)


def forward_kinematics(skeleton, pose):
    """Accumulate world transforms; the root's pose rotation is ignored."""
    nj = skeleton.n_joints
    if pose.n_joints != nj:
        raise ValueError("pose joint count mismatch")
    wr = np.empty((nj, 3, 3))
    wt = np.empty((nj, 3))
    for i, j in enumerate(skeleton.joints):
        local_rot = np.eye(3) if j.parent < 0 else pose.rotations[i]
        if j.parent < 0:
            wr[i] = j.rest_rotation @ local_rot
            wt[i] = j.rest_translation
        else:
            p = j.parent
            wr[i] = wr[p] @ j.rest_rotation @ local_rot
            wt[i] = wr[p] @ j.rest_translation + wt[p]
    return JointTransforms(wr, wt)


def pose_to_feature(pose):
    """Flatten (J,3,3) rotations to a (9J,) row-major vector."""
    return pose.rotations.reshape(-1).copy()


def feature_to_pose(feature):
    f = np.asarray(feature, dtype=np.float64)
    if f.size % 9 != 0:
        raise ValueError("feature length must be a multiple of 9")
    return Pose(f.reshape(-1, 3, 3).copy())


def _sample_halfnormal_mixture(rng, lo, hi):
    """Angle from two half-normals over [lo,0] and [0,hi].

    Component weights are proportional to |lo| and hi, each sigma is half the
    corresponding limit, and draws beyond the limit are rejected and redrawn
    so the support is exactly [lo, hi].
    """
    w_neg, w_pos = -lo, hi
    total = w_neg + w_pos
    if total == 0.0:
        return 0.0
    for _ in range(10000):
        if rng.uniform() < w_pos / total:
            a = abs(rng.normal(0.0, w_pos / 2.0))
            if a <= hi:
                return a
        else:
            a = abs(rng.normal(0.0, w_neg / 2.0))
            if a <= w_neg:
                return -a
    return 0.0


def _sample_sine_uniform(rng, lo, hi):
    """Altitude angle with sin(theta) uniform in [sin lo, sin hi]."""
    s = rng.uniform(np.sin(lo), np.sin(hi))
    return float(np.arcsin(np.clip(s, -1.0, 1.0)))


def sample_pose(skeleton, rng_seed):
    """Draw a random pose within joint limits, deterministic per seed.

    Centerline joints draw each axis from the half-normal mixture; limb
    joints (shoulders, arms) draw x and y uniformly and the z altitude in
    sine space. The root stays at identity. Joints are visited in index
    order and axes in application order (x, z, y) so the stream of RNG calls
    is reproducible.
    """
    rng = np.random.default_rng(rng_seed)
    rots = np.tile(np.eye(3), (skeleton.n_joints, 1, 1))
    for i, j in enumerate(skeleton.joints):
        if j.parent < 0:
            continue
        lim = j.limits
        if j.limb:
            ax = rng.uniform(lim[0, 0], lim[0, 1])
            az = _sample_sine_uniform(rng, lim[1, 0], lim[1, 1])
            ay = rng.uniform(lim[2, 0], lim[2, 1])
        else:
            ax = _sample_halfnormal_mixture(rng, lim[0, 0], lim[0, 1])
            az = _sample_halfnormal_mixture(rng, lim[1, 0], lim[1, 1])
            ay = _sample_halfnormal_mixture(rng, lim[2, 0], lim[2, 1])
        rots[i] = euler_xzy(ax, az, ay)
    return Pose(rots)


def pose_angles_in_limits(skeleton, angles):
    """Check an (J,3) array of x,z,y angles against the limit table."""
    ok = True
    for i, j in enumerate(skeleton.joints):
        lim = j.limits
        a = angles[i]
        ok = ok and bool((a >= lim[:, 0] - 1e-12).all()
                         and (a <= lim[:, 1] + 1e-12).all())
    return ok


# ---------------------------------------------------------------------------
# serialization


def skeleton_to_json(skeleton):
    return {
        "joints": [
            {
                "name": j.name,
                "parent": j.parent,
                "rest_rotation": j.rest_rotation.reshape(-1).tolist(),
                "rest_translation": j.rest_translation.tolist(),
                "limits": j.limits.tolist(),
                "limb": bool(j.limb),
            }
            for j in skeleton.joints
        ]
    }


def skeleton_from_json(doc):
    joints = [
        Joint(
            name=jd["name"],
            parent=int(jd["parent"]),
            rest_rotation=np.asarray(jd["rest_rotation"], dtype=np.float64).reshape(3, 3),
            rest_translation=np.asarray(jd["rest_translation"], dtype=np.float64),
            limits=np.asarray(jd["limits"], dtype=np.float64),
            limb=bool(jd.get("limb", False)),
        )
        for jd in doc["joints"]
    ]
    return Skeleton(joints)


def save_pose_batch(path, poses):
    """Write poses as a JSON array of flattened rotation rows."""
    rows = [pose_to_feature(p).tolist() for p in poses]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh)


def load_pose_batch(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    return [feature_to_pose(np.asarray(r)) for r in rows]


# ---------------------------------------------------------------------------
# default rigs


def _chain_joint(name, parent, offset, limits, limb=False):
    return Joint(name=name, parent=parent, rest_rotation=np.eye(3),
                 rest_translation=np.asarray(offset, dtype=np.float64),
                 limits=np.asarray(limits, dtype=np.float64), limb=limb)


_SPINE_LIMITS = [[-0.20, 0.35], [-0.25, 0.25], [-0.35, 0.35]]
_NECK_LIMITS = [[-0.15, 0.25], [-0.20, 0.20], [-0.30, 0.30]]
# altitude (z) limits must stay inside [-pi/2, pi/2] for the sine-space
# sampling to be invertible; 1.5 rad lets a dropped arm reach the torso
_SHOULDER_LIMITS = [[-0.30, 0.30], [-1.50, 1.50], [-0.35, 0.35]]
_ARM_LIMITS = [[-0.50, 0.50], [-1.30, 0.60], [-0.40, 0.40]]


def make_tee_skeleton():
    """10-joint upper-body rig for the tee: spine chain plus two arms.

    Joint world rest positions (cm): hips (0,100,0) up through neck1
    (0,154,0); shoulders at (+-10,144,0); upper arms at (+-34,144,0). The
    left arm points along +x.
    """
    zero = [[0.0, 0.0]] * 3
    joints = [
        _chain_joint("hips", -1, (0.0, 100.0, 0.0), zero),
        _chain_joint("lower_back", 0, (0.0, 10.0, 0.0), _SPINE_LIMITS),
        _chain_joint("spine", 1, (0.0, 12.0, 0.0), _SPINE_LIMITS),
        _chain_joint("spine1", 2, (0.0, 12.0, 0.0), _SPINE_LIMITS),
        _chain_joint("neck", 3, (0.0, 12.0, 0.0), _NECK_LIMITS),
        _chain_joint("neck1", 4, (0.0, 8.0, 0.0), _NECK_LIMITS),
        _chain_joint("l_shoulder", 3, (10.0, 10.0, 0.0), _SHOULDER_LIMITS,
                     limb=True),
        _chain_joint("l_arm", 6, (24.0, 0.0, 0.0), _ARM_LIMITS, limb=True),
        _chain_joint("r_shoulder", 3, (-10.0, 10.0, 0.0), _SHOULDER_LIMITS,
                     limb=True),
        _chain_joint("r_arm", 8, (-24.0, 0.0, 0.0), _ARM_LIMITS, limb=True),
    ]
    return Skeleton(joints)


def make_necktie_skeleton():
    """4-joint spine chain used for the necktie experiments (36-dim pose)."""
    zero = [[0.0, 0.0]] * 3
    joints = [
        _chain_joint("lower_back", -1, (0.0, 110.0, 0.0), zero),
        _chain_joint("spine", 0, (0.0, 12.0, 0.0), _SPINE_LIMITS),
        _chain_joint("neck", 1, (0.0, 24.0, 0.0), _NECK_LIMITS),
        _chain_joint("neck1", 2, (0.0, 8.0, 0.0), _NECK_LIMITS),
    ]
    return Skeleton(joints)
