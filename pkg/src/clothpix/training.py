"""Mini-batch training loop with held-out model selection.

Models train against one of three target flavors, chosen by the dataset:
per-vertex offset stacks (n, V, 3) for direct-head networks, subspace
coefficient rows (n, k) for coefficient heads, and lists of raster targets
for image decoders. All three share the LossWeights semantics from the
losses module; geometry terms require per-sample GeomTargets.

After every epoch the held-out split is evaluated in inference mode and the
parameter state with the lowest held-out loss is kept; training returns that
best state, so longer schedules can only help. A non-finite training loss
stops the run and restores the best state seen, with the result flagged.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .losses import (LossWeights, _pixel_norm_and_grad, decode_positions,
                     image_objective, normal_term, vector_objective)

REQUIRED_SPLITS = ("train", "regularization", "test")


@dataclass
class TrainSchedule:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class TrainData:
    """Features, targets, and split indices ready for the loop.

    targets: (n, V, 3) array, (n, k) array, or list of ClothImage. geoms
    optionally holds one GeomTarget per sample for the geometry loss terms.
    """

    features: np.ndarray
    targets: object
    splits: dict
    geoms: list = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.features)
        if len(self.targets) != n:
            raise ValueError("features/targets length mismatch")
        if self.geoms is not None and len(self.geoms) != n:
            raise ValueError("need one geom target per sample")
        for name in REQUIRED_SPLITS:
            if name not in self.splits:
                raise ValueError("missing split %r" % name)
        idx = np.concatenate([np.asarray(self.splits[s])
                              for s in REQUIRED_SPLITS])
        if len(np.unique(idx)) != len(idx):
            raise ValueError("splits overlap")

    def subset(self, name):
        return np.asarray(self.splits[name], dtype=np.int64)


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_reg_loss: float
    diverged: bool = False


# ---------------------------------------------------------------------------
# batch objective


def _batch_objective(model, features, targets, weights, geoms, train,
                     want_grad):
    """Mean loss over one batch; backpropagates into model when asked.

    Returns (loss, dy or None). dy is only built for the gradient pass to
    keep plain evaluation cheap.
    """
    out = model.forward(features, train=train)
    bsz = len(features)
    dy = np.zeros_like(out) if want_grad else None
    total = 0.0

    if isinstance(targets, np.ndarray) and targets.ndim == 3:
        pred = out.reshape(targets.shape)
        for i in range(bsz):
            geom = geoms[i] if geoms is not None else None
            t, _, dp = vector_objective(pred[i], targets[i], weights, geom)
            total += t / bsz
            if want_grad:
                dy[i] = dp.reshape(dy[i].shape) / bsz
    elif isinstance(targets, np.ndarray):
        diff = out - targets
        if weights.pixel_norm == "l1":
            total = float(np.abs(diff).mean())
            if want_grad:
                dy = np.sign(diff) / diff.size
        else:
            total = float((diff * diff).mean())
            if want_grad:
                dy = 2.0 * diff / diff.size
    else:
        for i in range(bsz):
            geom = geoms[i] if geoms is not None else None
            pred_data = np.moveaxis(out[i], 0, -1)
            t, _, dp = image_objective(pred_data, targets[i], weights, geom)
            total += t / bsz
            if want_grad:
                dy[i] = np.moveaxis(dp, -1, 0) / bsz

    if want_grad:
        model.backward(dy)
    return total


def backprop(model, features, targets, weights, geoms=None, train=True):
    """Mean batch loss with exact parameter gradients accumulated in place.

    Raises on non-finite gradients, naming the offending parameter.
    """
    nn.zero_grad(model)
    loss = _batch_objective(model, features, targets, weights, geoms,
                            train=train, want_grad=True)
    for p in model.params():
        if not np.isfinite(p.grad).all():
            raise ValueError("non-finite gradient in %s" % p.name)
    return loss


def evaluate(model, features, targets, weights, geoms=None, batch_size=64):
    """Mean loss over a whole split in inference mode."""
    n = len(features)
    total = 0.0
    for s in range(0, n, batch_size):
        e = min(s + batch_size, n)
        sub_geoms = geoms[s:e] if geoms is not None else None
        sub_targets = targets[s:e]
        loss = _batch_objective(model, features[s:e], sub_targets, weights,
                                sub_geoms, train=False, want_grad=False)
        total += loss * (e - s)
    return total / n


def vertex_error_cm(model, features, targets):
    """Mean per-vertex offset error magnitude for direct-output models.

    With orthonormal offset frames this equals the mean world-space
    position error. Only defined for (n, V, 3) targets; callers of other
    flavors report nan.
    """
    out = model.forward(features, train=False).reshape(targets.shape)
    return float(np.linalg.norm(out - targets, axis=2).mean())


def normal_error(model, features, targets, geoms):
    """Mean cosine distance of decoded normals for direct-output models."""
    out = model.forward(features, train=False).reshape(targets.shape)
    total = 0.0
    for i, geom in enumerate(geoms):
        pos = decode_positions(geom.frames, out[i])
        loss, _, _ = normal_term(pos, geom.triangles, geom.gt_normals)
        total += loss
    return total / len(geoms)


def mean_predictor_loss(targets, weights):
    """Loss of always predicting the mean target; scale baseline."""
    t = np.asarray(targets, dtype=np.float64)
    diff = t - t.mean(axis=0, keepdims=True)
    if t.ndim == 3:
        per, _ = _pixel_norm_and_grad(diff, weights.pixel_norm)
        return float(per.mean())
    if weights.pixel_norm == "l1":
        return float(np.abs(diff).mean())
    return float((diff * diff).mean())


# ---------------------------------------------------------------------------
# training loop


def train(model, data, schedule):
    """Mini-batch Adam training with best-held-out-state selection.

    Returns (model, TrainResult); the model carries the parameters of the
    epoch whose held-out loss was lowest. History rows hold per-epoch
    train/held-out losses and, when computable, the mean per-vertex error.
    """
    rng = np.random.default_rng(schedule.seed)
    adam = nn.Adam(model.params(), lr=schedule.learning_rate)
    w = schedule.weights

    train_idx = data.subset("train")
    reg_idx = data.subset("regularization")
    direct = isinstance(data.targets, np.ndarray) and data.targets.ndim == 3

    def pick(idx):
        feats = data.features[idx]
        if isinstance(data.targets, np.ndarray):
            targ = data.targets[idx]
        else:
            targ = [data.targets[i] for i in idx]
        geom = [data.geoms[i] for i in idx] if data.geoms is not None else None
        return feats, targ, geom

    history = []
    best_state = nn.get_state(model)
    best_reg = math.inf
    best_epoch = 0
    diverged = False

    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        n_batches = 0
        for s in range(0, len(order), schedule.batch_size):
            bidx = train_idx[order[s:s + schedule.batch_size]]
            feats, targ, geom = pick(bidx)
            loss = backprop(model, feats, targ, w, geoms=geom, train=True)
            if not math.isfinite(loss):
                diverged = True
                break
            adam.step()
            epoch_loss += loss
            n_batches += 1
        if diverged:
            break

        feats, targ, geom = pick(reg_idx)
        reg_loss = evaluate(model, feats, targ, w, geoms=geom)
        row = {"epoch": epoch,
               "train_loss": epoch_loss / max(n_batches, 1),
               "reg_loss": reg_loss,
               "vertex_err_cm": (vertex_error_cm(model, feats, targ)
                                 if direct else math.nan),
               "normal_err": (normal_error(model, feats, targ, geom)
                              if direct and geom is not None else math.nan)}
        history.append(row)
        if reg_loss < best_reg:
            best_reg = reg_loss
            best_epoch = epoch
            best_state = nn.get_state(model)

    nn.set_state(model, best_state)
    return model, TrainResult(history=history, best_epoch=best_epoch,
                              best_reg_loss=best_reg, diverged=diverged)


HISTORY_FIELDS = ("epoch", "train_loss", "reg_loss", "vertex_err_cm",
                  "normal_err")


def write_history_csv(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, math.nan) for k in HISTORY_FIELDS})


def read_history_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append({"epoch": int(row["epoch"]),
                         **{k: float(row[k]) for k in HISTORY_FIELDS[1:]}})
    return rows
