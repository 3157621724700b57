"""Linear offset subspace: fit, project, reconstruct, seam filtering.

The basis lives over stacked per-vertex offsets (d = 3 * n_vertices). The
same machinery serves two jobs: a compact regression target for the FC
network head, and a low-pass filter that knocks cross-seam discontinuities
out of naively stitched patch predictions.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import blobio
from .embedding import OffsetField


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray        # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    variances: np.ndarray   # (k,), descending

    def __post_init__(self):
        self.validate()

    @property
    def d(self):
        return self.mean.shape[0]

    @property
    def k(self):
        return self.components.shape[0]

    def validate(self, tol=1e-8):
        if self.mean.ndim != 1 or self.components.ndim != 2:
            raise ValueError("basis arrays have wrong rank")
        k, d = self.components.shape
        if d != self.mean.shape[0] or self.variances.shape != (k,):
            raise ValueError("basis array shapes disagree")
        if (np.diff(self.variances) > 1e-12).any() or (self.variances < -1e-12).any():
            raise ValueError("variances must be nonnegative and descending")
        gram = self.components @ self.components.T
        if np.abs(gram - np.eye(k)).max() > tol:
            raise ValueError("component rows are not orthonormal")


def fit(samples, k):
    """Top-k principal directions of the rows of samples (n, d).

    mean is the column average, components the leading right singular
    vectors of the centered matrix, variances the corresponding sample
    covariance eigenvalues. Each component's sign is fixed so that its
    largest-magnitude entry is positive, making refits reproducible.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be a 2d matrix")
    n, d = samples.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError("k=%d out of range, max %d" % (k, min(n - 1, d)))
    mean = samples.mean(axis=0)
    centered = samples - mean
    # thin SVD: we only ever need min(n, d) directions
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    variances = s[:k] ** 2 / (n - 1)
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return PcaBasis(mean, comps, variances)


def project(basis, x):
    """Coefficients of x (d,) or a batch (n, d) in the basis."""
    return (np.asarray(x, dtype=np.float64) - basis.mean) @ basis.components.T


def reconstruct(basis, coeffs):
    """Inverse of project on the subspace: mean + coeffs @ components."""
    return basis.mean + np.asarray(coeffs, dtype=np.float64) @ basis.components


def filter_seams(basis, stitched_field, k_filter):
    """Project an offset field onto the leading k_filter components.

    Stitching patch predictions leaves jumps across patch boundaries that
    the training set never contained; truncated reconstruction keeps only
    deformations the training data actually spans, which suppresses them.
    """
    if not 1 <= k_filter <= basis.k:
        raise ValueError("k_filter=%d out of range, basis has %d components"
                         % (k_filter, basis.k))
    x = stitched_field.values.reshape(-1)
    if x.shape[0] != basis.d:
        raise ValueError("field has %d dofs, basis expects %d"
                         % (x.shape[0], basis.d))
    coeffs = (x - basis.mean) @ basis.components[:k_filter].T
    filtered = basis.mean + coeffs @ basis.components[:k_filter]
    return OffsetField(filtered.reshape(-1, 3), stitched_field.frame_mode)


def _basis_hash(mean, components, variances):
    h = hashlib.sha256()
    for a in (mean, components, variances):
        h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def save_basis(path, basis):
    header = {"kind": "pca-basis", "d": basis.d, "k": basis.k,
              "hash": _basis_hash(basis.mean, basis.components, basis.variances)}
    blobio.write_blob(path, header, [("mean", basis.mean),
                                     ("components", basis.components),
                                     ("variances", basis.variances)])


def load_basis(path):
    header, arrays = blobio.read_blob(path)
    if header.get("kind") != "pca-basis":
        raise ValueError("%s is not a basis file" % path)
    got = _basis_hash(arrays["mean"], arrays["components"], arrays["variances"])
    if got != header["hash"]:
        raise ValueError("basis file %s is corrupt (hash mismatch)" % path)
    basis = object.__new__(PcaBasis)
    object.__setattr__(basis, "mean", arrays["mean"])
    object.__setattr__(basis, "components", arrays["components"])
    object.__setattr__(basis, "variances", arrays["variances"])
    # float32 storage rounds the components; allow quantization slack
    basis.validate(tol=1e-5)
    return basis
