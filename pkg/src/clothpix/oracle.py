"""Synthetic deformation oracle and dataset assembly.

The oracle is a deterministic stand-in for a cloth simulator: a smooth map
from pose to per-vertex offsets. Each joint contributes its rotation's
deviation from rest, passed through a bounded nonlinearity and spread over
the garment by a Gaussian influence field in UV; wrinkle terms add
pose-modulated sinusoids over UV. Both vanish at the rest pose, so the rest
garment decodes to its embedded on-body shape.

Dataset assembly draws poses from the skeleton sampler, rejects poses whose
arm probes sink into the torso and samples whose decoded triangles compress
below a quarter or stretch beyond twice their rest area, then splits
80/10/10 by a seeded shuffle. Every retained sample records the candidate
index of its pose so the whole dataset regenerates bit-identically from the
manifest.
"""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .body import prune_pose, skin_lbs
from .clothimage import load_cimg, rasterize, sample_at_uv, save_cimg
from .embedding import (FRAME_MODES, OFFSET_CAP_TEE, OffsetField,
                        apply_offsets)
from .meshcore import triangle_areas
from .skeleton import pose_to_feature, sample_pose

AREA_RATIO_MIN = 0.25
AREA_RATIO_MAX = 2.0
SPLIT_NAMES = ("train", "regularization", "test")
MIN_ACCEPT_RATE = 0.10
BASE_AMPLITUDE = 2.0
WRINKLE_AMPLITUDE = 0.5


@dataclass
class OracleSpec:
    """Parameters of the synthetic pose->offset map.

    centers/sigmas define per-joint Gaussian influence over UV; gains holds
    one 3x3 mixing matrix per joint and offset channel applied to the
    joint's rotation deviation; wrinkles couple a UV sinusoid to one
    rotation-matrix entry of one joint.
    """

    seed: int
    centers: np.ndarray        # (J, 2) influence centers in UV
    sigmas: np.ndarray         # (J,) influence radii in UV
    gains: np.ndarray          # (J, 3, 3, 3) [joint, channel, 3, 3]
    base_amplitude: float
    wrinkle_wavevec: np.ndarray   # (W, 2) radians per UV unit
    wrinkle_phase: np.ndarray     # (W,)
    wrinkle_dir: np.ndarray       # (W, 3) unit offset-space direction
    wrinkle_joint: np.ndarray     # (W,) joint index
    wrinkle_axis: np.ndarray      # (W, 2) rotation-matrix entry (row, col)
    wrinkle_amplitude: float
    frame_mode: str = "local-tbn"
    cap: float = OFFSET_CAP_TEE

    def __post_init__(self):
        if self.frame_mode not in FRAME_MODES:
            raise ValueError("unknown frame_mode %r" % (self.frame_mode,))
        nj = len(self.centers)
        if self.gains.shape != (nj, 3, 3, 3) or self.sigmas.shape != (nj,):
            raise ValueError("per-joint parameter shapes disagree")
        if not 0.0 <= self.base_amplitude <= self.cap:
            raise ValueError("base amplitude outside [0, cap]")
        if not 0.0 <= self.wrinkle_amplitude <= self.cap:
            raise ValueError("wrinkle amplitude outside [0, cap]")

    def content_hash(self):
        h = hashlib.sha256()
        for arr in (self.centers, self.sigmas, self.gains,
                    self.wrinkle_wavevec, self.wrinkle_phase,
                    self.wrinkle_dir, self.wrinkle_joint.astype(np.float64),
                    self.wrinkle_axis.astype(np.float64)):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(json.dumps([self.seed, self.base_amplitude,
                             self.wrinkle_amplitude, self.frame_mode,
                             self.cap]).encode())
        return h.hexdigest()[:16]


def make_oracle_spec(seed, skeleton, cloth, n_wrinkles=6,
                     base_amplitude=BASE_AMPLITUDE,
                     wrinkle_amplitude=WRINKLE_AMPLITUDE,
                     frame_mode="local-tbn", cap=OFFSET_CAP_TEE):
    """Draw a random but reproducible oracle over the cloth's UV extent."""
    rng = np.random.default_rng(seed)
    nj = skeleton.n_joints
    lo = cloth.uv.min(axis=0)
    hi = cloth.uv.max(axis=0)
    span = hi - lo

    centers = lo + rng.uniform(0.1, 0.9, size=(nj, 2)) * span
    sigmas = rng.uniform(0.25, 0.6, size=nj) * span.max()
    gains = rng.normal(size=(nj, 3, 3, 3))
    gains /= np.linalg.norm(gains, axis=(2, 3), keepdims=True)

    # axis-aligned low-frequency modes keep the field band limited, so the
    # raster codec resolves it with margin at working resolutions
    wavevec = np.zeros((n_wrinkles, 2))
    axis_pick = rng.integers(0, 2, size=n_wrinkles)
    cycles = rng.uniform(1.0, 3.0, size=n_wrinkles)
    for w in range(n_wrinkles):
        a = axis_pick[w]
        wavevec[w, a] = 2.0 * np.pi * cycles[w] / max(span[a], 1e-9)
    direction = rng.normal(size=(n_wrinkles, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    entries = np.array([(0, 1), (0, 2), (1, 2), (1, 0), (2, 0), (2, 1)])
    return OracleSpec(
        seed=seed, centers=centers, sigmas=sigmas, gains=gains,
        base_amplitude=base_amplitude,
        wrinkle_wavevec=wavevec,
        wrinkle_phase=rng.uniform(0.0, 2.0 * np.pi, size=n_wrinkles),
        wrinkle_dir=direction,
        wrinkle_joint=rng.integers(0, nj, size=n_wrinkles),
        wrinkle_axis=entries[rng.integers(0, len(entries), size=n_wrinkles)],
        wrinkle_amplitude=wrinkle_amplitude,
        frame_mode=frame_mode, cap=cap)


def oracle_offsets(spec, pose, cloth):
    """Deterministic smooth offsets for one pose; zero at the rest pose."""
    uv = cloth.uv
    dev = pose.rotations - np.eye(3)[None, :, :]

    d2 = ((uv[:, None, :] - spec.centers[None, :, :]) ** 2).sum(axis=2)
    infl = np.exp(-0.5 * d2 / spec.sigmas[None, :] ** 2)
    # g[j, c] = sin(<gains[j, c], R_j - I>): bounded, smooth, zero at rest
    g = np.sin(np.einsum("jcab,jab->jc", spec.gains, dev))
    vals = spec.base_amplitude * infl @ g

    phase = uv @ spec.wrinkle_wavevec.T + spec.wrinkle_phase[None, :]
    coupling = dev[spec.wrinkle_joint, spec.wrinkle_axis[:, 0],
                   spec.wrinkle_axis[:, 1]]
    vals += spec.wrinkle_amplitude * np.sin(phase) @ \
        (coupling[:, None] * spec.wrinkle_dir)
    return OffsetField(vals, spec.frame_mode).check(cap=spec.cap)


def distortion_filter(cloth, decoded_positions):
    """Accept unless any triangle left [1/4, 2x] of its rest area."""
    areas = triangle_areas(np.asarray(decoded_positions, dtype=np.float64),
                           cloth.triangles)
    ratio = areas / cloth.rest_areas
    return bool((ratio >= AREA_RATIO_MIN).all()
                and (ratio <= AREA_RATIO_MAX).all())


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class Dataset:
    """Pose features with per-sample offsets and frozen splits."""

    features: np.ndarray   # (n, 9*J)
    offsets: np.ndarray    # (n, V, 3)
    frame_mode: str
    splits: dict           # name -> index array
    provenance: dict

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        n = len(self.features)
        idx = np.concatenate([np.asarray(self.splits[s])
                              for s in SPLIT_NAMES])
        if sorted(idx.tolist()) != list(range(n)):
            raise ValueError("splits must partition the samples")

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.features.tobytes())
        h.update(self.offsets.tobytes())
        for s in SPLIT_NAMES:
            h.update(np.asarray(self.splits[s], dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def split_sizes(n):
    """80/10/10 with the tail absorbing rounding."""
    n_train = int(0.8 * n)
    n_reg = int(0.1 * n)
    return n_train, n_reg, n - n_train - n_reg


def _candidate_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(index,)))


def generate_dataset(n_target, body, cloth, emb, spec, seed,
                     feature_joints=None, max_candidates=None):
    """Sample, filter, and split a pose->offsets dataset.

    feature_joints restricts the stored pose feature to a joint subset
    (garments that ignore the arms train on shorter vectors). Aborts when
    the joint accept rate of pose pruning and the distortion filter drops
    below MIN_ACCEPT_RATE.
    """
    if max_candidates is None:
        max_candidates = max(50 * n_target, 200)
    features = []
    offsets = []
    kept_candidates = []
    n_pruned = 0
    n_distorted = 0
    candidate = 0
    while len(features) < n_target:
        if candidate >= max_candidates or (
                candidate >= 10 * n_target
                and len(features) < MIN_ACCEPT_RATE * candidate):
            raise RuntimeError(
                "oracle acceptance rate %.1f%% after %d candidates "
                "(%d pruned poses, %d distorted samples)"
                % (100.0 * len(features) / max(candidate, 1), candidate,
                   n_pruned, n_distorted))
        pose = sample_pose(body.skeleton, _candidate_rng(seed, candidate))
        candidate += 1
        if not prune_pose(body, pose):
            n_pruned += 1
            continue
        field = oracle_offsets(spec, pose, cloth)
        positions = apply_offsets(field, emb, body, pose)
        if not distortion_filter(cloth, positions):
            n_distorted += 1
            continue
        if feature_joints is None:
            features.append(pose_to_feature(pose))
        else:
            features.append(pose.rotations[feature_joints].reshape(-1))
        offsets.append(field.values)
        kept_candidates.append(candidate - 1)

    n = n_target
    n_train, n_reg, n_test = split_sizes(n)
    order = np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(2 ** 32,))).permutation(n)
    splits = {"train": np.sort(order[:n_train]),
              "regularization": np.sort(order[n_train:n_train + n_reg]),
              "test": np.sort(order[n_train + n_reg:])}
    provenance = {"seed": int(seed),
                  "oracle_hash": spec.content_hash(),
                  "body_hash": body.content_hash(),
                  "frame_mode": spec.frame_mode,
                  "candidates": [int(c) for c in kept_candidates],
                  "n_pruned": n_pruned,
                  "n_distorted": n_distorted,
                  "feature_joints": (None if feature_joints is None
                                     else [int(j) for j in feature_joints])}
    return Dataset(features=np.asarray(features),
                   offsets=np.asarray(offsets),
                   frame_mode=spec.frame_mode,
                   splits=splits, provenance=provenance)


# ---------------------------------------------------------------------------
# on-disk form: manifest + poses.csv + one raster per sample


def save_dataset(dirpath, dataset, cloth, resolution, pad_rings=4):
    """Write manifest.json, poses.csv, and zero-padded .cimg rasters."""
    os.makedirs(dirpath, exist_ok=True)
    n = len(dataset.features)
    digits = max(len(str(n - 1)), 4)
    names = []
    uv_windows = charts = None
    for i in range(n):
        img = rasterize(OffsetField(dataset.offsets[i], dataset.frame_mode),
                        cloth, resolution, pad_rings=pad_rings)
        uv_windows, charts = img.uv_windows, img.charts
        name = "sample_%0*d.cimg" % (digits, i)
        save_cimg(img, os.path.join(dirpath, name))
        names.append(name)

    manifest = {"n": n,
                "resolution": list(np.atleast_1d(resolution).astype(int))
                if not np.isscalar(resolution) else [int(resolution)] * 2,
                "pad_rings": int(pad_rings),
                "frame_mode": dataset.frame_mode,
                "uv_windows": [list(w) for w in uv_windows],
                "charts": list(charts),
                "splits": {k: [int(i) for i in v]
                           for k, v in dataset.splits.items()},
                "provenance": dataset.provenance,
                "images": names,
                "dataset_hash": dataset.content_hash()}
    with open(os.path.join(dirpath, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)

    with open(os.path.join(dirpath, "poses.csv"), "w",
              encoding="utf-8") as fh:
        width = dataset.features.shape[1]
        fh.write("sample," + ",".join("f%d" % k for k in range(width)) + "\n")
        for i in range(n):
            fh.write("%d,%s\n" % (i, ",".join(
                "%.17g" % x for x in dataset.features[i])))


def load_dataset(dirpath, cloth):
    """Rebuild a Dataset from a saved directory.

    Offsets are re-sampled from the rasters at the cloth vertices, so they
    carry the codec's interpolation error; the manifest keeps the original
    in-memory hash for provenance checks.
    """
    with open(os.path.join(dirpath, "manifest.json"), "r",
              encoding="utf-8") as fh:
        manifest = json.load(fh)
    feats = np.loadtxt(os.path.join(dirpath, "poses.csv"), delimiter=",",
                       skiprows=1, ndmin=2)[:, 1:]
    uv_windows = tuple(tuple(w) for w in manifest["uv_windows"])
    charts = tuple(manifest["charts"])
    offsets = []
    for name in manifest["images"]:
        img = load_cimg(os.path.join(dirpath, name), uv_windows=uv_windows,
                        charts=charts, frame_mode=manifest["frame_mode"])
        offsets.append(sample_at_uv(img, cloth.uv, cloth.chart_id).values)
    splits = {k: np.asarray(v, dtype=np.int64)
              for k, v in manifest["splits"].items()}
    return Dataset(features=feats, offsets=np.asarray(offsets),
                   frame_mode=manifest["frame_mode"], splits=splits,
                   provenance=manifest["provenance"])
