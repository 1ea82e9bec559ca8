"""earmatch command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from contextlib import contextmanager
from pathlib import Path

from earmatch.annotations import read_annotation, list_annotated
from earmatch.calibration import (
    CalibrationRecord,
    ConversionFactors,
    ReferenceDistance,
    average_factors,
    load_reference_factors,
    read_cm_table,
    read_factors_csv,
    scale_from_reference,
    to_centimetres,
    write_factors_csv,
)
from earmatch.cli.config import PipelineConfig, load_config, require_path
from earmatch.dataset import augment_directory, expand_corpus, load_corpus, load_image
from earmatch.errors import (
    AnnotationFormatError,
    ConfigError,
    EarmatchError,
    EmptyCorpusError,
    IncompleteLandmarkSetError,
    SizeMismatchError,
)
from earmatch.fileio import atomic_write_text
from earmatch.landmarks import (
    DISTANCE_NAMES,
    AnthroVector,
    measure_distances,
    select_relevant,
)
from earmatch.matcher import best_match, format_match, load_database, match_report
from earmatch.meshrender import batch_render
from earmatch.net import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    Sequential,
    TrainHistory,
    build_canonical_model,
    evaluate,
    load_model,
    predict_landmarks,
    save_model,
    train,
)


class StageError(EarmatchError):
    """A pipeline stage failed; the message names the stage."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except EarmatchError as exc:
        raise StageError(f"{name} stage: {exc}") from exc


def _parse_floats(text: str, count: int, what: str) -> tuple[float, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        values = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    if len(values) != count:
        raise ConfigError(f"{what}: expected {count} numbers, got {len(values)}")
    return values


# --- train / evaluate -------------------------------------------------------


def _build_model(config: PipelineConfig) -> Sequential:
    if config.arch == "canonical":
        return build_canonical_model(seed=config.seed)
    if config.arch == "reduced":
        layers = [Conv2D(4, 3), MaxPool2D(8), Flatten(), Dense(110)]
        return Sequential(layers, input_shape=(224, 224, 3), seed=config.seed)
    raise ConfigError(f"arch must be 'canonical' or 'reduced', got {config.arch!r}")


def _load_split_corpus(config: PipelineConfig):
    images = require_path(
        config.images_dir, "images_dir",
        "point it at the corpus image directory", directory=True,
    )
    landmarks = require_path(
        config.landmarks_dir, "landmarks_dir",
        "point it at the matching landmark .txt directory", directory=True,
    )
    with _stage("corpus"):
        corpus = load_corpus(images, landmarks)
    for path, message in corpus.report.errors:
        print(f"skipped {path}: {message}")
    return corpus


def _write_history(history: TrainHistory, path: Path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    with_metrics = bool(history.metrics)
    header = ["epoch", "loss"]
    if with_metrics:
        header += ["val_loss", "mean_radial_error_px", "pck"]
    writer.writerow(header)
    for i, loss in enumerate(history.losses, start=1):
        row = [i, repr(loss)]
        if with_metrics:
            report = history.metrics[i - 1]
            row += [repr(report.loss), repr(report.mean_radial_error_px), repr(report.pck)]
        writer.writerow(row)
    atomic_write_text(path, buffer.getvalue())


def cmd_train(args, config: PipelineConfig) -> int:
    corpus = _load_split_corpus(config)
    if config.augment_train:
        with _stage("augment"):
            corpus = expand_corpus(corpus, config.rotation_deg)
    samples = corpus.train if corpus.train else corpus.test
    if config.limit:
        samples = samples[: config.limit]
    train_config = config.train_config()
    print(
        f"train: arch={config.arch} samples={len(samples)}"
        f" learning_rate={train_config.learning_rate}"
        f" beta1={train_config.beta1} beta2={train_config.beta2}"
        f" decay={train_config.decay} epochs={train_config.epochs}"
        f" batch_size={train_config.batch_size} seed={train_config.seed}"
    )
    model = _build_model(config)
    eval_samples = corpus.test if (config.eval_during_train and corpus.test) else None
    with _stage("train"):
        model, history = train(
            model, samples, train_config, eval_samples=eval_samples, log=print
        )
    with _stage("save"):
        save_model(model, config.model_path)
    _write_history(history, config.history_path())
    print(f"model written to {config.model_path}")
    print(f"history written to {config.history_path()}")
    return 0


def cmd_evaluate(args, config: PipelineConfig) -> int:
    model_path = require_path(
        config.model_path, "model_path", "train a model first", directory=False
    )
    corpus = _load_split_corpus(config)
    pools = {
        "train": corpus.train,
        "test": corpus.test,
        "all": corpus.train + corpus.test,
    }
    samples = pools[args.split]
    if config.limit:
        samples = samples[: config.limit]
    if not samples:
        raise EmptyCorpusError(f"no samples in split {args.split!r}")
    with _stage("load-model"):
        model = load_model(model_path)
    with _stage("evaluate"):
        report = evaluate(model, samples, config.pck_threshold_px)
    print(f"evaluate: split={args.split} samples={len(samples)}")
    print(
        f"loss={report.loss!r}"
        f" mean_radial_error_px={report.mean_radial_error_px!r}"
        f" pck={report.pck!r}"
    )
    return 0


# --- dataset / rendering ----------------------------------------------------


def cmd_augment(args, config: PipelineConfig) -> int:
    images = require_path(
        config.images_dir, "images_dir", "corpus images to expand", directory=True
    )
    landmarks = require_path(
        config.landmarks_dir, "landmarks_dir", "matching landmark files", directory=True
    )
    with _stage("augment"):
        counts, report = augment_directory(
            images, landmarks, config.out_dir,
            angle_deg=config.rotation_deg,
            limit=config.limit or None,
        )
        if sum(counts.values()) == 0:
            raise EmptyCorpusError("no image/landmark pairs produced any output")
    for path, message in report.errors:
        print(f"skipped {path}: {message}")
    print(
        f"augment: train={counts['train']} test={counts['test']}"
        f" written to {config.out_dir}"
    )
    return 0


def cmd_render(args, config: PipelineConfig) -> int:
    meshes = require_path(
        config.mesh_dir, "mesh_dir", "directory of .stl head meshes", directory=True
    )
    with _stage("render"):
        report = batch_render(meshes, config.out_dir, config.camera_spec())
    for path, message in report.errors:
        print(f"render failed {path}: {message}", file=sys.stderr)
    print(f"render: images={report.count} manifest={report.manifest_path}")
    return 1 if report.errors else 0


# --- calibration --------------------------------------------------------------


def cmd_calibrate(args, config: PipelineConfig) -> int:
    annotations_dir = require_path(
        config.annotations_dir, "annotations_dir",
        "directory of exported landmark annotations", directory=True,
    )
    cm_path = require_path(
        config.cm_table_csv, "cm_table_csv",
        "ground-truth centimetre table (ear_id,d1_cm..d7_cm)", directory=False,
    )
    with _stage("cm-table"):
        table = read_cm_table(cm_path)
    annotated = list_annotated(annotations_dir)
    records, skipped = [], []
    for ear_id in annotated:
        if ear_id not in table:
            skipped.append((ear_id, "no centimetre row"))
            continue
        try:
            doc = read_annotation(annotations_dir, ear_id)
            px = measure_distances(doc.landmarks)
        except (AnnotationFormatError, IncompleteLandmarkSetError, SizeMismatchError) as exc:
            skipped.append((ear_id, str(exc)))
            continue
        records.append(CalibrationRecord(ear_id, table[ear_id], px))
    for ear_id in sorted(set(table) - set(annotated)):
        skipped.append((ear_id, "no annotation"))
    for ear_id, why in skipped:
        print(f"skipped {ear_id}: {why}")
    with _stage("calibrate"):
        factors = average_factors(records)
    out = config.factors_csv or "factors.csv"
    write_factors_csv(factors, out)
    for name, value in zip(DISTANCE_NAMES, factors.factors):
        print(f"{name} {value!r}")
    print(f"overall_average {factors.overall_average!r}")
    print(f"factors written to {out} (n_ears={factors.n_ears})")
    return 0


# --- matching -----------------------------------------------------------------


def _resolve_factors(args, config: PipelineConfig) -> ConversionFactors:
    if args.ref_points or args.ref_length_cm is not None:
        if not (args.ref_points and args.ref_length_cm is not None):
            raise ConfigError("--ref-points and --ref-length-cm must be given together")
        x1, y1, x2, y2 = _parse_floats(args.ref_points, 4, "--ref-points")
        try:
            reference = ReferenceDistance((x1, y1), (x2, y2), args.ref_length_cm)
        except ValueError as exc:
            raise ConfigError(f"--ref-points: {exc}") from None
        with _stage("reference"):
            scale = scale_from_reference(reference)
        return ConversionFactors.uniform(scale)
    if config.factors_csv:
        factors_path = require_path(
            config.factors_csv, "factors_csv",
            "run 'earmatch calibrate' to produce it", directory=False,
        )
        with _stage("factors"):
            return read_factors_csv(factors_path)
    if config.use_preset_factors:
        return load_reference_factors()
    raise ConfigError(
        "no conversion factors: set factors_csv, pass --preset-factors,"
        " or supply --ref-points with --ref-length-cm"
    )


def cmd_match(args, config: PipelineConfig) -> int:
    if (args.ref_points is None) != (args.ref_length_cm is None):
        raise ConfigError("--ref-points and --ref-length-cm must be given together")
    if args.vector and args.ref_points is not None:
        raise ConfigError("--ref-points only applies to --image input")
    database_path = require_path(
        config.database_csv, "database_csv",
        "anthropometric database (subject_id,side,d1..d7[,hrtf_ref])", directory=False,
    )
    with _stage("database"):
        database = load_database(database_path)
    px = factors = reference_used = None
    if args.vector:
        try:
            cm = AnthroVector(_parse_floats(args.vector, 7, "--vector"))
        except ValueError as exc:
            raise ConfigError(f"--vector: {exc}") from None
    elif args.image:
        model_path = require_path(
            config.model_path, "model_path", "train a model first", directory=False
        )
        with _stage("load-model"):
            model = load_model(model_path)
        image_path = require_path(
            str(args.image), "--image", "ear image to match", directory=False
        )
        with _stage("image"):
            image = load_image(image_path)
            if image.shape != (224, 224, 3):
                raise SizeMismatchError(
                    f"{image_path}: image is {image.shape[1]}x{image.shape[0]},"
                    " expected 224x224"
                )
        with _stage("predict"):
            landmarks = predict_landmarks(model, image)
        with _stage("select"):
            subset = select_relevant(landmarks)
        with _stage("measure"):
            px = measure_distances(subset)
        factors = _resolve_factors(args, config)
        reference_used = bool(args.ref_points)
        with _stage("convert"):
            cm = to_centimetres(px, factors)
    else:
        raise ConfigError("match needs --image or --vector")
    side = config.side_filter()
    with _stage("match"):
        result = best_match(cm, database, side=side)
    report = {
        "px": list(px.d) if px is not None else None,
        "cm": list(cm.d),
        "factors": (
            {
                "values": list(factors.factors),
                "overall_average": factors.overall_average,
                "source": factors.source,
            }
            if factors is not None
            else None
        ),
        "reference_distance_used": bool(reference_used),
        "side_filter": side,
        "match": match_report(result, top_k=config.top_k),
    }
    print(format_match(result))
    if args.json:
        print(json.dumps(report, indent=2))
    if args.report:
        atomic_write_text(args.report, json.dumps(report, indent=2) + "\n")
        print(f"report written to {args.report}")
    return 0


# --- annotation service ---------------------------------------------------------


def cmd_annotate_serve(args, config: PipelineConfig) -> int:
    from earmatch.cli.annotate_server import create_server

    require_path(
        config.images_dir, "images_dir", "directory of ear images to annotate",
        directory=True,
    )
    Path(config.annotations_dir or "annotations").mkdir(parents=True, exist_ok=True)
    server = create_server(config)
    print(
        f"annotation service on http://{config.host}:{server.port}/"
        f" (images={config.images_dir}, annotations={config.annotations_dir})"
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.server_close()
    return 0


# --- argument plumbing ----------------------------------------------------------

# argparse dest -> config field, applied after --set overrides
_FLAG_KEYS = {
    "images": "images_dir",
    "landmarks": "landmarks_dir",
    "model": "model_path",
    "history": "history_csv",
    "factors": "factors_csv",
    "cm_table": "cm_table_csv",
    "database": "database_csv",
    "meshes": "mesh_dir",
    "annotations": "annotations_dir",
    "out": "out_dir",
    "arch": "arch",
    "learning_rate": "learning_rate",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "seed": "seed",
    "limit": "limit",
    "augment": "augment_train",
    "eval_during_train": "eval_during_train",
    "angle": "rotation_deg",
    "side": "side",
    "top_k": "top_k",
    "preset_factors": "use_preset_factors",
    "host": "host",
    "port": "port",
    "ui": "ui_dir",
}


def _apply_flags(args, config: PipelineConfig) -> None:
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, bool) and not value:
            continue  # store_true flags only ever switch a default on
        setattr(config, key, value)


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY=VALUE", help="override one config key",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earmatch",
        description="Ear-image landmark pipeline: train, calibrate, render, match.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the landmark model")
    _common(p)
    p.add_argument("--images", help="corpus image directory")
    p.add_argument("--landmarks", help="corpus landmark directory")
    p.add_argument("--model", help="output model path")
    p.add_argument("--history", help="output history CSV path")
    p.add_argument("--arch", choices=("canonical", "reduced"))
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int, help="cap the number of training samples")
    p.add_argument("--augment", action="store_true", help="train on the x6 corpus")
    p.add_argument(
        "--eval", action="store_true", dest="eval_during_train",
        help="evaluate on the test split each epoch",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a model on a corpus split")
    _common(p)
    p.add_argument("--images")
    p.add_argument("--landmarks")
    p.add_argument("--model")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("augment", help="write the x6 augmented corpus to disk")
    _common(p)
    p.add_argument("--images")
    p.add_argument("--landmarks")
    p.add_argument("--out", help="output corpus root")
    p.add_argument("--angle", type=float, help="rotation magnitude in degrees")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("render", help="render ear images from head meshes")
    _common(p)
    p.add_argument("--meshes", help="directory of .stl meshes")
    p.add_argument("--out", help="output image directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("calibrate", help="compute conversion factors")
    _common(p)
    p.add_argument("--annotations", help="annotation directory")
    p.add_argument("--cm-table", dest="cm_table", help="ear_id,d1_cm..d7_cm CSV")
    p.add_argument("--factors", help="output factors CSV path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("match", help="find the closest database ear")
    _common(p)
    p.add_argument("--image", help="224x224 ear image to match")
    p.add_argument("--vector", help="seven centimetre distances, comma separated")
    p.add_argument("--database", help="anthropometric database CSV")
    p.add_argument("--model", help="trained model (image input only)")
    p.add_argument("--factors", help="conversion factors CSV")
    p.add_argument(
        "--preset-factors", action="store_true", dest="preset_factors",
        help="use the built-in published factors (unvalidated)",
    )
    p.add_argument("--ref-points", dest="ref_points", metavar="X1,Y1,X2,Y2",
                   help="reference segment endpoints in image pixels")
    p.add_argument("--ref-length-cm", dest="ref_length_cm", type=float,
                   help="physical length of the reference segment")
    p.add_argument("--side", choices=("left", "right"))
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--json", action="store_true", help="print the JSON report")
    p.add_argument("--report", help="write the JSON report to a file")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("annotate-serve", help="serve the annotation tool locally")
    _common(p)
    p.add_argument("--images", help="directory of images to annotate")
    p.add_argument("--annotations", help="directory annotations are written to")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ui", help="directory with the built UI bundle")
    p.set_defaults(func=cmd_annotate_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        _apply_flags(args, config)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EarmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
