"""Command-line entry point wiring the pipeline stages together.

Exit codes: 0 success, 2 usage error, 3 invalid configuration,
4 IO failure, 5 insufficient patients for cross-validation,
6 malformed data (manifest, image, or probability file).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (LABELS, DatasetManifest, ManifestError, PgmError,
                   dataset_stats, load_manifest)
from .evaluation import (ConfigError, InsufficientPatients, METHODS,
                         RunConfig, confusion_metrics, prepare_record_image,
                         record_patch_coords, results_csv, roc_auc, roc_csv,
                         run_cv, summary_dict)
from .features import GlcmConfig, LbpConfig
from .forest import load_forest, save_forest, train_random_forest
from .fusion import fuse
from .synth import SynthConfig, generate_dataset
from .util import default_jobs
from . import evaluation, features, wholeimage

_EXIT_CONFIG = 3
_EXIT_IO = 4
_EXIT_PATIENTS = 5
_EXIT_DATA = 6


def _load_data(path: str) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return load_manifest(p)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_patients=args.patients,
        images_per_patient=args.images_per_patient,
        image_size=args.size,
        class_mix=args.mix,
        seed=args.seed,
        patient_style_jitter=args.style_jitter,
        hard=args.hard,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = generate_dataset(config, args.out, jobs=args.jobs)
    print(f"wrote {len(manifest.records)} images under {args.out}")
    return 0


def cmd_stats(args) -> int:
    manifest = _load_data(args.data)
    text = dataset_stats(manifest).to_csv()
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_preprocess(args) -> int:
    manifest = _load_data(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = RunConfig(method="PPF@0.5x" if args.scale == 0.5 else "PPF@1.0x")
    if args.mode == "wholeimage":
        sidecar = ["patient,sequence,frame,p_low,p_high,side,origin_x,origin_y"]
        for rec in manifest.records:
            img, _ = prepare_record_image(manifest, rec, 1.0)
            comp = wholeimage.percentile_compress(img)
            crop = wholeimage.max_square_crop(
                comp.pixels, img.mask_center, img.mask_radius)
            raster = wholeimage.resize_to(crop, args.target)
            name = f"{rec.patient}_{rec.sequence}_f{rec.frame:04d}.pgm"
            header = f"P5\n{args.target} {args.target}\n255\n".encode()
            (out / name).write_bytes(header + raster.tobytes())
            sidecar.append(
                f"{rec.patient},{rec.sequence},{rec.frame},{comp.p_low!r},"
                f"{comp.p_high!r},{crop.side},{crop.origin[0]},{crop.origin[1]}")
        _write(out / "preprocess.csv", "\n".join(sidecar) + "\n")
    else:
        lines = ["patient,sequence,frame,patch_index,c1,c2,c3,c4"]
        for rec in manifest.records:
            img, rects = prepare_record_image(manifest, rec, args.scale)
            for j, c in enumerate(record_patch_coords(img, rects, config)):
                lines.append(f"{rec.patient},{rec.sequence},{rec.frame},{j},"
                             f"{c.c1},{c.c2},{c.c3},{c.c4}")
        _write(out / "patches.csv", "\n".join(lines) + "\n")
    return 0


def cmd_featurize(args) -> int:
    manifest = _load_data(args.data)
    config = RunConfig(method=f"RF-{args.features.upper()}@{args.scale:.1f}x",
                       jobs=args.jobs)
    config.validate()
    schema = (LbpConfig().names() if args.features == "lbp"
              else GlcmConfig().names())
    names = tuple(f"mean:{n}" for n in schema) + tuple(f"std:{n}" for n in schema)
    header = "patient,sequence,frame,label," + ",".join(names)
    records = manifest.records
    from .util import run_parallel
    prepared = run_parallel(evaluation._prepare_worker,
                            list(range(len(records))), args.jobs,
                            shared=(manifest, records, args.scale))
    rows = run_parallel(evaluation._feature_worker,
                        list(range(len(records))), args.jobs,
                        shared=(prepared, args.features, config))
    lines = [header]
    for rec, (mean, std) in zip(records, rows):
        values = ",".join(repr(float(v)) for v in np.concatenate([mean, std]))
        lines.append(f"{rec.patient},{rec.sequence},{rec.frame},{rec.label},"
                     f"{values}")
    _write(Path(args.out), "\n".join(lines) + "\n")
    return 0


def _read_feature_csv(path: str):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ManifestError(f"empty feature file {path}")
    header = lines[0].split(",")
    if header[:4] != ["patient", "sequence", "frame", "label"]:
        raise ManifestError(f"unexpected feature header in {path}")
    meta, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        meta.append((parts[0], parts[1], int(parts[2]), parts[3]))
        rows.append([float(v) for v in parts[4:]])
    X = np.asarray(rows, dtype=np.float64)
    y = np.array([1 if m[3] == LABELS[1] else 0 for m in meta], dtype=np.int64)
    return meta, X, y


def cmd_train(args) -> int:
    _meta, X, y = _read_feature_csv(args.features)
    model = train_random_forest(X, y, trees=args.trees, seed=args.seed,
                                jobs=args.jobs)
    save_forest(model, args.out)
    print(f"saved {model.n_trees}-tree model ({model.n_features} features) "
          f"to {args.out}")
    return 0


def cmd_predict(args) -> int:
    meta, X, _y = _read_feature_csv(args.features)
    model = load_forest(args.model)
    probs = model.predict_proba(X)[:, 1]
    lines = ["patient,sequence,frame,label,p_image"]
    for (patient, sequence, frame, label), p in zip(meta, probs):
        lines.append(f"{patient},{sequence},{frame},{label},{float(p)!r}")
    _write(Path(args.out), "\n".join(lines) + "\n")
    return 0


def cmd_fuse(args) -> int:
    manifest = _load_data(args.data)
    config = RunConfig(method="PPF@0.5x" if args.scale == 0.5 else "PPF@1.0x")
    probs: dict[tuple, dict[int, float]] = {}
    lines = Path(args.probs).read_text().splitlines()
    if not lines or lines[0].split(",") != \
            ["patient", "sequence", "frame", "patch_index", "p_c1"]:
        raise ManifestError(
            f"{args.probs}: expected header patient,sequence,frame,"
            f"patch_index,p_c1")
    for line in lines[1:]:
        patient, sequence, frame, idx, p = line.split(",")
        probs.setdefault((patient, sequence, int(frame)), {})[int(idx)] = float(p)

    out_lines = ["patient,sequence,frame,label,p_image"]
    for rec in manifest.records:
        key = (rec.patient, rec.sequence, rec.frame)
        if key not in probs:
            continue
        img, rects = prepare_record_image(manifest, rec, args.scale)
        coords = record_patch_coords(img, rects, config)
        pairs = []
        for idx, p in sorted(probs[key].items()):
            if not 0 <= idx < len(coords):
                raise ManifestError(
                    f"{args.probs}: patch_index {idx} out of range for "
                    f"{key} ({len(coords)} admitted patches)")
            pairs.append((coords[idx], p))
        fused = fuse(pairs, (img.width, img.height))
        out_lines.append(f"{rec.patient},{rec.sequence},{rec.frame},"
                         f"{rec.label},{fused.p!r}")
    if len(out_lines) == 1:
        raise ManifestError("no probability rows matched any manifest record")
    _write(Path(args.out), "\n".join(out_lines) + "\n")
    return 0


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _build_run_config(args) -> RunConfig:
    values = dataclasses.asdict(RunConfig())
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if "config" in doc and isinstance(doc["config"], dict):
            doc = doc["config"]  # accept a summary.json verbatim
        unknown = set(doc) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    config = RunConfig(**values)
    config.validate()
    return config


def cmd_cv(args) -> int:
    config = _build_run_config(args)
    manifest = _load_data(args.data)
    report = run_cv(manifest, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "results.csv", results_csv(report))
    _write(out / "roc.csv", roc_csv(report))
    _write(out / "summary.json",
           json.dumps(summary_dict(report), indent=1, sort_keys=True) + "\n")
    print(f"{report.method}: accuracy={report.accuracy:.4f} "
          f"sensitivity={report.sensitivity:.4f} "
          f"specificity={report.specificity:.4f} auc={report.auc:.4f}")
    return 0


def cmd_report(args) -> int:
    lines = Path(args.results).read_text().splitlines()
    header = lines[0].split(",")
    try:
        li = header.index("label")
        pi = header.index("p_image")
    except ValueError:
        raise ManifestError(f"{args.results}: missing label/p_image columns")
    labels, probs = [], []
    for line in lines[1:]:
        parts = line.split(",")
        labels.append(1 if parts[li] == LABELS[1] else 0)
        probs.append(float(parts[pi]))
    labels = np.array(labels)
    probs = np.array(probs)
    acc, sens, spec = confusion_metrics(labels, probs, args.threshold)
    _roc, auc = roc_auc(labels, probs)
    doc = {"accuracy": acc, "sensitivity": sens, "specificity": spec,
           "auc": auc, "n_images": int(len(labels)),
           "threshold": args.threshold}
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clescreen",
        description="Patch-based screening pipeline for circular-field "
                    "endomicroscopy images.",
        epilog="exit codes: 0 ok, 2 usage, 3 invalid config, 4 IO failure, "
               "5 insufficient patients, 6 malformed data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=12)
    p.add_argument("--images-per-patient", type=int, default=60)
    p.add_argument("--size", type=int, default=576)
    p.add_argument("--mix", type=float, default=0.483)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--style-jitter", type=float, default=1.0)
    p.add_argument("--hard", action="store_true",
                   help="shrink the class margin")
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset statistics CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("preprocess", help="emit preprocessed rasters")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("wholeimage", "patches"),
                   default="wholeimage")
    p.add_argument("--scale", type=float, choices=(1.0, 0.5), default=0.5)
    p.add_argument("--target", type=int, default=wholeimage.TARGET_SIZE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("featurize", help="texture feature CSV per image")
    p.add_argument("--data", required=True)
    p.add_argument("--features", choices=("lbp", "glcm"), default="lbp")
    p.add_argument("--scale", type=float, choices=(1.0, 0.5), default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit a random forest on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a feature CSV with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="fuse externally computed patch "
                                    "probabilities into image scores")
    p.add_argument("--data", required=True)
    p.add_argument("--probs", required=True,
                   help="CSV patient,sequence,frame,patch_index,p_c1")
    p.add_argument("--scale", type=float, choices=(1.0, 0.5), default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("cv", help="leave-one-patient-out cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config (or a previous summary.json); "
                                    "explicit flags win")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--k-aug", dest="k_aug", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--admission-fraction", dest="admission_fraction",
                   type=float)
    p.add_argument("--patch-classifier", dest="patch_classifier",
                   choices=("logistic", "forest"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--glcm-levels", dest="glcm_levels", type=int)
    p.add_argument("--wholeimage-baseline", dest="wholeimage_baseline",
                   action="store_const", const=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("report", help="recompute metrics from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"clescreen: invalid configuration: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except InsufficientPatients as exc:
        print(f"clescreen: {exc}", file=sys.stderr)
        return _EXIT_PATIENTS
    except (ManifestError, PgmError) as exc:
        print(f"clescreen: bad data: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except OSError as exc:
        print(f"clescreen: IO error: {exc}", file=sys.stderr)
        return _EXIT_IO
    except ValueError as exc:
        print(f"clescreen: {exc}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
