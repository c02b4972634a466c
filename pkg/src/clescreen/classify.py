"""Training-set assembly and probabilistic patch/image classifiers.

The classifier contract is minimal: anything with
``predict_proba(rows) -> (n, 2)`` posteriors that sum to 1 can score
patches or image feature vectors.  In-repo it is satisfied by the random
forest (see `forest`) and by a gradient-descent logistic baseline working
on whitened patch rasters.  Externally computed patch probabilities can
bypass both through the probability-CSV interface of the CLI.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import CARCINOGENIC, DatasetManifest, ImageRecord
from .util import rng_from


class PatchClassifier(Protocol):
    def predict_proba(self, rows: np.ndarray) -> np.ndarray: ...


@dataclass
class TrainSet:
    """Aligned rows/labels with per-row record provenance.

    Provenance keeps augmentation lineage attached to every row so that
    balancing can prefer augmented rows and the evaluation harness can
    audit exactly which records influenced a model.
    """

    rows: np.ndarray
    labels: np.ndarray
    provenance: list[ImageRecord]

    def __post_init__(self) -> None:
        if not (len(self.rows) == len(self.labels) == len(self.provenance)):
            raise ValueError("rows, labels, provenance must align")

    def __len__(self) -> int:
        return len(self.labels)


def record_label(record: ImageRecord) -> int:
    return 1 if record.label == CARCINOGENIC else 0


def augment_rotations(manifest: DatasetManifest, k: int = 2,
                      seed: int = 0) -> DatasetManifest:
    """Add k randomly rotated copies of every original record.

    Angles are uniform over [0, 360) from a per-record stream, so the
    result does not depend on record order.  Copies carry their source
    frame and angle; the original records are returned untouched.
    """
    if k < 0:
        raise ValueError(f"augmentation count must be >= 0, got {k}")
    if any(r.is_augmented for r in manifest.records):
        raise ValueError("augmentation input must contain only originals")
    out: list[ImageRecord] = []
    for rec in manifest.records:
        out.append(rec)
        rng = rng_from(seed, "rotation", rec.patient, rec.sequence, rec.frame)
        angles = rng.uniform(0.0, 360.0, size=k)
        for angle in angles:
            out.append(dataclasses.replace(
                rec, augmented_from=rec.frame, rotation_deg=float(angle)))
    return DatasetManifest(records=out, root_path=manifest.root_path)


def balance_classes(train: TrainSet, seed: int = 0) -> TrainSet:
    """Equalize class counts by removing rows, never fabricating any.

    Randomly chosen augmented rows of the majority class go first; only
    if those run out are original rows removed (with a warning), since
    originals carry information the augmentation merely recycles.
    """
    labels = np.asarray(train.labels)
    n1 = int((labels == 1).sum())
    n0 = int((labels == 0).sum())
    if n0 == 0 or n1 == 0:
        raise ValueError("balancing needs both classes present")
    if n0 == n1:
        return train
    majority = 0 if n0 > n1 else 1
    excess = abs(n0 - n1)
    rng = np.random.Generator(np.random.PCG64(seed))

    aug_idx = [i for i, rec in enumerate(train.provenance)
               if labels[i] == majority and rec.is_augmented]
    orig_idx = [i for i, rec in enumerate(train.provenance)
                if labels[i] == majority and not rec.is_augmented]
    drop: list[int] = []
    take_aug = min(excess, len(aug_idx))
    if take_aug:
        pick = rng.permutation(len(aug_idx))[:take_aug]
        drop.extend(aug_idx[i] for i in pick)
    short = excess - take_aug
    if short > 0:
        warnings.warn(
            f"balancing exhausted augmented majority rows; removing "
            f"{short} original rows", stacklevel=2)
        pick = rng.permutation(len(orig_idx))[:short]
        drop.extend(orig_idx[i] for i in pick)

    keep = np.ones(len(labels), dtype=bool)
    keep[drop] = False
    return TrainSet(
        rows=np.asarray(train.rows)[keep],
        labels=labels[keep],
        provenance=[rec for i, rec in enumerate(train.provenance) if keep[i]],
    )


# ---------------------------------------------------------------------------
# Logistic baseline
# ---------------------------------------------------------------------------

_CHUNK_ROWS = 16384


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_grad(weights: np.ndarray, bias: float, X: np.ndarray,
                       y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy loss and its analytic gradient.

    Chunked over rows so the full logits vector never needs a second
    matrix-sized buffer on large patch sets.
    """
    n, d = X.shape
    dt = np.float64
    grad_w = np.zeros(d, dtype=dt)
    grad_b = 0.0
    loss = 0.0
    w = np.asarray(weights, dtype=X.dtype)
    for s in range(0, n, _CHUNK_ROWS):
        Xc = X[s:s + _CHUNK_ROWS]
        yc = y[s:s + _CHUNK_ROWS]
        z = Xc @ w + bias
        # log(1 + e^z) - y*z, evaluated stably
        loss += float(np.logaddexp(0.0, z).sum() - (yc * z).sum())
        err = (_sigmoid(z) - yc).astype(X.dtype)
        grad_w += (err @ Xc).astype(dt)
        grad_b += float(err.sum())
    loss = loss / n + 0.5 * l2 * float(np.dot(weights, weights))
    grad_w = grad_w / n + l2 * np.asarray(weights, dtype=dt)
    return loss, grad_w, grad_b / n


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    seed: int
    losses: np.ndarray

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        X = np.asarray(rows)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.weights):
            raise ValueError(
                f"row has {X.shape[1]} features, model expects "
                f"{len(self.weights)}")
        p1 = np.empty(len(X), dtype=np.float64)
        w = self.weights.astype(X.dtype, copy=False)
        for s in range(0, len(X), _CHUNK_ROWS):
            z = X[s:s + _CHUNK_ROWS] @ w + self.bias
            p1[s:s + _CHUNK_ROWS] = _sigmoid(np.asarray(z, dtype=np.float64))
        return np.stack([1.0 - p1, p1], axis=1)


def train_logistic(X: np.ndarray, y: np.ndarray, epochs: int = 60,
                   rate: float = 0.5, seed: int = 0,
                   l2: float = 0.0) -> LogisticModel:
    """Full-batch gradient descent on the logistic loss.

    Weights start at zero (posterior 0.5 everywhere), so on a fixed batch
    the loss trace is deterministic and decreases monotonically for a
    sufficiently small rate.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=X.dtype)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with matching labels")
    if epochs < 1 or rate <= 0:
        raise ValueError("epochs must be >= 1 and rate > 0")
    w = np.zeros(X.shape[1], dtype=np.float64)
    b = 0.0
    losses = np.empty(epochs + 1, dtype=np.float64)
    for e in range(epochs):
        loss, gw, gb = logistic_loss_grad(w, b, X, y, l2)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss {loss} at epoch {e} "
                f"(rate={rate}, |w|={float(np.abs(w).max())})")
        losses[e] = loss
        w -= rate * gw
        b -= rate * gb
    losses[-1], _, _ = logistic_loss_grad(w, b, X, y, l2)
    return LogisticModel(weights=w, bias=b, seed=seed, losses=losses)
