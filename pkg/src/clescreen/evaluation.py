"""Leave-one-patient-out cross-validation and result reporting.

Folds are partitioned by patient so intra-video correlation never leaks
between training and test sides; rotated copies only ever train.  Per-fold
scores are concatenated into one result vector over all original records,
from which threshold metrics, the ROC curve, and the tie-aware
Mann-Whitney AUC are computed.  Every random draw derives from the master
seed plus the fold's patient id, so runs are reproducible and independent
of worker count.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import classify, core, features, forest, fusion, patching, wholeimage
from .util import default_jobs, run_parallel, shared_state, stable_seed

METHODS = (
    "RF-LBP@1.0x",
    "RF-LBP@0.5x",
    "RF-GLCM@1.0x",
    "RF-GLCM@0.5x",
    "PPF@1.0x",
    "PPF@0.5x",
    "WHOLEIMAGE@0.55x",
)


class ConfigError(ValueError):
    """Invalid run configuration."""


class InsufficientPatients(ValueError):
    """Too few patients to form leave-one-patient-out folds."""

_METHOD_SPEC = {
    "RF-LBP@1.0x": ("features", "lbp", 1.0),
    "RF-LBP@0.5x": ("features", "lbp", 0.5),
    "RF-GLCM@1.0x": ("features", "glcm", 1.0),
    "RF-GLCM@0.5x": ("features", "glcm", 0.5),
    "PPF@1.0x": ("ppf", None, 1.0),
    "PPF@0.5x": ("ppf", None, 0.5),
    "WHOLEIMAGE@0.55x": ("wholeimage", None, 1.0),
}


@dataclass
class RunConfig:
    method: str = "RF-LBP@0.5x"
    seed: int = 42
    patch_size: int = patching.DEFAULT_PATCH_SIZE
    overlap: float = patching.DEFAULT_OVERLAP
    admission_fraction: float = patching.DEFAULT_ADMISSION_FRACTION
    trees: int = forest.DEFAULT_TREES
    k_aug: int = 2
    threshold: float = 0.5
    jobs: int = field(default_factory=default_jobs)
    patch_classifier: str = "logistic"
    epochs: int = 100
    rate: float = 0.01
    l2: float = 1e-3
    glcm_levels: int = 16
    wholeimage_baseline: bool = False
    target_size: int = wholeimage.TARGET_SIZE

    def validate(self) -> None:
        if self.method not in _METHOD_SPEC:
            raise ConfigError(
                f"unknown method {self.method!r}; choose from "
                f"{', '.join(METHODS)}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be in [0, 1]")
        if self.trees < 1 or self.k_aug < 0 or self.epochs < 1:
            raise ConfigError("trees/epochs must be >= 1 and k_aug >= 0")
        if self.rate <= 0:
            raise ConfigError("rate must be positive")
        if not 0.0 < self.admission_fraction <= 1.0:
            raise ConfigError("admission_fraction must be in (0, 1]")
        if self.patch_classifier not in ("logistic", "forest"):
            raise ConfigError(
                f"unknown patch classifier {self.patch_classifier!r}")

    @property
    def scale(self) -> float:
        return _METHOD_SPEC[self.method][2]


# ---------------------------------------------------------------------------
# Fold planning
# ---------------------------------------------------------------------------


@dataclass
class Fold:
    test_patient: str
    train_records: list[core.ImageRecord]
    test_records: list[core.ImageRecord]


@dataclass
class FoldPlan:
    folds: list[Fold]


def lopo_folds(manifest: core.DatasetManifest) -> FoldPlan:
    """One fold per patient: that patient's originals test, everything of
    every other patient (originals plus rotated copies) trains."""
    patients = manifest.patients()
    if len(patients) < 2:
        raise InsufficientPatients(
            f"leave-one-patient-out needs >= 2 patients, got {len(patients)}")
    folds = []
    for patient in patients:
        test = [r for r in manifest.records
                if r.patient == patient and not r.is_augmented]
        train = [r for r in manifest.records if r.patient != patient]
        folds.append(Fold(test_patient=patient, train_records=train,
                          test_records=test))
    return FoldPlan(folds=folds)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def confusion_metrics(labels: np.ndarray, probs: np.ndarray,
                      threshold: float = 0.5) -> tuple[float, float, float]:
    """(accuracy, sensitivity, specificity) predicting 1 iff p >= threshold."""
    labels = np.asarray(labels).astype(int)
    probs = np.asarray(probs, dtype=float)
    if len(labels) == 0:
        raise ValueError("empty result vector")
    if not np.all(np.isfinite(probs)):
        raise ValueError("non-finite probabilities")
    pred = probs >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    fp = int(np.sum(pred & ~pos))
    acc = (tp + tn) / len(labels)
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    return acc, sens, spec


def mann_whitney_auc(labels: np.ndarray, probs: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative,
    crediting ties 0.5 (average-rank form of the pair statistic)."""
    labels = np.asarray(labels).astype(int)
    probs = np.asarray(probs, dtype=float)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(probs, kind="stable")
    sorted_probs = probs[order]
    ranks = np.empty(len(probs), dtype=float)
    i = 0
    while i < len(probs):
        j = i
        while j < len(probs) and sorted_probs[j] == sorted_probs[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # average 1-based rank
        i = j
    rank_sum_pos = float(ranks[labels == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_points(labels: np.ndarray, probs: np.ndarray) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) sweeping thresholds down the distinct scores.

    Tied scores collapse into a single step, so the trapezoidal area under
    this curve equals the tie-aware pair statistic.  Starts at (0, 0) with
    threshold +inf and ends at (1, 1).
    """
    labels = np.asarray(labels).astype(int)
    probs = np.asarray(probs, dtype=float)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-probs, kind="stable")
    sl = labels[order]
    ss = probs[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    while i < len(ss):
        j = i
        while j < len(ss) and ss[j] == ss[i]:
            j += 1
        tp += int(sl[i:j].sum())
        fp += (j - i) - int(sl[i:j].sum())
        points.append((fp / n_neg, tp / n_pos, float(ss[i])))
        i = j
    return points


def roc_auc(labels: np.ndarray, probs: np.ndarray):
    """ROC sweep plus AUC; the AUC is the Mann-Whitney statistic, which
    coincides with the trapezoidal area under the tie-aware curve."""
    return roc_points(labels, probs), mann_whitney_auc(labels, probs)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ResultRow:
    patient: str
    sequence: str
    frame: int
    label: int
    p: float


@dataclass
class FoldAudit:
    """Provenance trail of one fold, for leakage auditing."""

    test_patient: str
    fold_seed: int
    train_patients: tuple[str, ...]
    train_keys: list[tuple]
    test_keys: list[tuple]
    balancing_removed: list[tuple]
    n_augmented_in_test: int


@dataclass
class EvalReport:
    method: str
    seed: int
    threshold: float
    results: list[ResultRow]
    accuracy: float
    sensitivity: float
    specificity: float
    roc: list[tuple[float, float, float]]
    auc: float
    n_images: int
    patch_accuracy: float | None
    fold_audits: list[FoldAudit]
    fold_seeds: dict[str, int]
    config: dict

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.results])

    def probs(self) -> np.ndarray:
        return np.array([r.p for r in self.results])


# ---------------------------------------------------------------------------
# Record preparation
# ---------------------------------------------------------------------------


def prepare_record_image(manifest: core.DatasetManifest,
                         record: core.ImageRecord,
                         scale: float) -> tuple[core.CleImage, list]:
    """Load a record at pipeline scale: rotate augmented copies about the
    view center, then downscale.  Artifact rectangles follow the same
    transforms (conservatively, by outward rounding)."""
    img = core.load_image(manifest.image_path(record))
    rects = list(record.artifacts)
    if record.is_augmented:
        dims = (img.width, img.height)
        rects = [r for r in
                 (patching.rotate_rect(rc, img.mask_center,
                                       record.rotation_deg, dims)
                  for rc in rects) if r is not None]
        img = wholeimage.rotate(img, record.rotation_deg)
    if scale == 0.5:
        img = patching.resize_half(img)
        rects = [patching.scale_rect(r, 0.5) for r in rects]
    elif scale != 1.0:
        raise ValueError(f"unsupported scale {scale}")
    return img, rects


def record_patch_coords(img: core.CleImage, rects, config: RunConfig):
    """Admitted patch coordinates of a prepared record, artifact-free,
    in grid order.  This ordering defines patch_index everywhere."""
    coords = patching.patch_grid(
        (img.width, img.height), img.mask_center, img.mask_radius,
        patch_size=config.patch_size, overlap=config.overlap,
        admission_fraction=config.admission_fraction)
    return patching.exclude_artifacts(coords, rects)


def _prepare_worker(index: int):
    manifest, records, scale = shared_state()
    return prepare_record_image(manifest, records[index], scale)


def _feature_worker(index: int):
    prepared, kind, config = shared_state()
    img, rects = prepared[index]
    coords = record_patch_coords(img, rects, config)
    if not coords:
        raise ValueError("record has no admissible patches")
    stack = np.stack([img.pixels[c.c3:c.c4, c.c1:c.c2] for c in coords])
    stack = stack.astype(np.float64)
    if kind == "lbp":
        mat = features.lbp_patch_matrix(stack)
    else:
        mat = features.glcm_patch_matrix(
            stack, features.GlcmConfig(levels=config.glcm_levels))
    return mat.mean(axis=0), mat.std(axis=0)


def _wholeimage_worker(index: int):
    prepared, config = shared_state()
    img, _rects = prepared[index]
    compressed = wholeimage.percentile_compress(img)
    crop = wholeimage.max_square_crop(
        compressed.pixels, img.mask_center, img.mask_radius)
    raster = wholeimage.resize_to(crop, config.target_size)
    row, _ = patching.whiten_values(raster.astype(np.float64).ravel())
    return row.astype(np.float32)


# ---------------------------------------------------------------------------
# Cross-validation driver
# ---------------------------------------------------------------------------


def run_cv(manifest: core.DatasetManifest, config: RunConfig) -> EvalReport:
    """Run the configured method under leave-one-patient-out CV.

    Per fold: balance the training records (augmented majority rows go
    first), fit the method's classifier, score the held-out patient's
    originals, and concatenate.  Returns the full report with metrics,
    ROC/AUC, and a per-fold provenance audit.
    """
    config.validate()
    kind, feat_kind, scale = _METHOD_SPEC[config.method]
    if kind == "wholeimage" and not config.wholeimage_baseline:
        raise ValueError(
            "method WHOLEIMAGE@0.55x has no in-scope trained network; "
            "inject patch probabilities via `fuse --probs` or pass the "
            "in-repo baseline flag (--wholeimage-baseline)")

    augmented = classify.augment_rotations(
        manifest, k=config.k_aug, seed=stable_seed(config.seed, "augment"))
    records = augmented.records
    labels = np.array([classify.record_label(r) for r in records], dtype=np.int64)
    index_of = {r.key(): i for i, r in enumerate(records)}

    prepared = run_parallel(_prepare_worker, list(range(len(records))),
                            config.jobs, shared=(augmented, records, scale))

    if kind == "features":
        pairs = run_parallel(_feature_worker, list(range(len(records))),
                             config.jobs, shared=(prepared, feat_kind, config))
        matrix = np.stack([np.concatenate(p) for p in pairs])
    elif kind == "wholeimage":
        rows = run_parallel(_wholeimage_worker, list(range(len(records))),
                            config.jobs, shared=(prepared, config))
        matrix = np.stack(rows)
    else:  # ppf
        coords_per_record = []
        dims_per_record = []
        ranges = np.empty((len(records), 2), dtype=np.int64)
        total = 0
        for i, (img, rects) in enumerate(prepared):
            coords = record_patch_coords(img, rects, config)
            if not coords:
                raise ValueError(
                    f"record {records[i].key()} has no admissible patches")
            coords_per_record.append(coords)
            dims_per_record.append((img.width, img.height))
            ranges[i] = (total, total + len(coords))
            total += len(coords)
        dim = config.patch_size * config.patch_size
        patch_cache = np.empty((total, dim), dtype=np.float32)
        patch_labels = np.empty(total, dtype=np.int64)
        for i, (img, _rects) in enumerate(prepared):
            lo, hi = ranges[i]
            for j, c in enumerate(coords_per_record[i]):
                block = img.pixels[c.c3:c.c4, c.c1:c.c2]
                white, _ = patching.whiten_values(block)
                patch_cache[lo + j] = white.ravel().astype(np.float32)
            patch_labels[lo:hi] = labels[i]

    plan = lopo_folds(augmented)
    fold_seeds: dict[str, int] = {}
    results: list[ResultRow] = []
    audits: list[FoldAudit] = []
    patch_hits = 0
    patch_total = 0

    for fold in plan.folds:
        if any(r.is_augmented for r in fold.test_records):
            raise RuntimeError(
                f"augmented record in test fold {fold.test_patient}")
        fold_seed = stable_seed(config.seed, "fold", fold.test_patient)
        fold_seeds[fold.test_patient] = fold_seed

        train_idx = np.array([index_of[r.key()] for r in fold.train_records])
        balanced = classify.balance_classes(
            classify.TrainSet(rows=train_idx[:, None],
                              labels=labels[train_idx],
                              provenance=list(fold.train_records)),
            seed=stable_seed(fold_seed, "balance"))
        kept_idx = balanced.rows[:, 0]
        kept_keys = {r.key() for r in balanced.provenance}
        removed = [r.key() for r in fold.train_records
                   if r.key() not in kept_keys]

        test_idx = np.array([index_of[r.key()] for r in fold.test_records])

        if kind in ("features", "wholeimage"):
            if kind == "features":
                model = forest.train_random_forest(
                    matrix[kept_idx], labels[kept_idx], trees=config.trees,
                    seed=fold_seed, jobs=config.jobs)
            else:
                model = classify.train_logistic(
                    matrix[kept_idx], labels[kept_idx].astype(np.float32),
                    epochs=config.epochs, rate=config.rate, seed=fold_seed,
                    l2=config.l2)
            probs = model.predict_proba(matrix[test_idx])[:, 1]
        else:
            row_idx = np.concatenate(
                [np.arange(*ranges[i]) for i in kept_idx])
            X = patch_cache[row_idx]
            y = patch_labels[row_idx]
            if config.patch_classifier == "logistic":
                model = classify.train_logistic(
                    X, y.astype(np.float32), epochs=config.epochs,
                    rate=config.rate, seed=fold_seed, l2=config.l2)
            else:
                model = forest.train_random_forest(
                    X, y, trees=config.trees, seed=fold_seed,
                    jobs=config.jobs)
            del X, y
            probs = np.empty(len(test_idx), dtype=np.float64)
            for n, i in enumerate(test_idx):
                lo, hi = ranges[i]
                pp = model.predict_proba(patch_cache[lo:hi])[:, 1]
                fused = fusion.fuse(
                    list(zip(coords_per_record[i], pp)), dims_per_record[i])
                probs[n] = fused.p
                patch_hits += int(((pp >= config.threshold).astype(int)
                                   == labels[i]).sum())
                patch_total += len(pp)

        for n, rec in enumerate(fold.test_records):
            results.append(ResultRow(
                patient=rec.patient, sequence=rec.sequence, frame=rec.frame,
                label=int(labels[test_idx[n]]), p=float(probs[n])))
        audits.append(FoldAudit(
            test_patient=fold.test_patient,
            fold_seed=fold_seed,
            train_patients=tuple(sorted({r.patient
                                         for r in balanced.provenance})),
            train_keys=[r.key() for r in balanced.provenance],
            test_keys=[r.key() for r in fold.test_records],
            balancing_removed=removed,
            n_augmented_in_test=sum(r.is_augmented for r in fold.test_records),
        ))

    y_all = np.array([r.label for r in results])
    p_all = np.array([r.p for r in results])
    acc, sens, spec = confusion_metrics(y_all, p_all, config.threshold)
    roc, auc = roc_auc(y_all, p_all)
    return EvalReport(
        method=config.method,
        seed=config.seed,
        threshold=config.threshold,
        results=results,
        accuracy=acc,
        sensitivity=sens,
        specificity=spec,
        roc=roc,
        auc=auc,
        n_images=len(results),
        patch_accuracy=(patch_hits / patch_total if patch_total else None),
        fold_audits=audits,
        fold_seeds=fold_seeds,
        config=dataclasses.asdict(config),
    )


# ---------------------------------------------------------------------------
# Output documents
# ---------------------------------------------------------------------------


def results_csv(report: EvalReport) -> str:
    lines = [f"method,patient,sequence,frame,label,p_image,pred@{report.threshold:g}"]
    for r in report.results:
        label = core.LABELS[r.label]
        pred = int(r.p >= report.threshold)
        lines.append(f"{report.method},{r.patient},{r.sequence},{r.frame},"
                     f"{label},{r.p!r},{pred}")
    return "\n".join(lines) + "\n"


def roc_csv(report: EvalReport) -> str:
    lines = ["threshold,fpr,tpr"]
    for fpr, tpr, thr in report.roc:
        lines.append(f"{thr!r},{fpr!r},{tpr!r}")
    return "\n".join(lines) + "\n"


def summary_dict(report: EvalReport) -> dict:
    # `jobs` is execution infrastructure with no effect on results; keeping
    # it out of the echo makes outputs byte-identical across worker counts.
    config = {k: v for k, v in report.config.items() if k != "jobs"}
    return {
        "method": report.method,
        "accuracy": report.accuracy,
        "sensitivity": report.sensitivity,
        "specificity": report.specificity,
        "auc": report.auc,
        "n_images": report.n_images,
        "seed": report.seed,
        "threshold": report.threshold,
        "patch_accuracy": report.patch_accuracy,
        "fold_seeds": dict(sorted(report.fold_seeds.items())),
        "config": config,
    }
