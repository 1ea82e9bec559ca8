"""earmatch: ear-image landmark prediction and anthropometric HRTF matching.

The pipeline runs in five steps, each usable on its own:

1. ``meshrender`` turns 3-D head scans into 224x224 ear images.
2. ``dataset`` loads image/landmark corpora and expands them sixfold.
3. ``net`` trains a from-scratch CNN that regresses 55 pinna landmarks.
4. ``landmarks`` + ``calibration`` reduce landmarks to seven pinna
   distances and convert them to centimetres.
5. ``matcher`` finds the database ear nearest in that 7-D space and
   reports which HRTF set to adopt.

``earmatch.cli.main`` wires the steps into the ``earmatch`` command;
``annotations`` holds the persistence formats shared with the annotation UI.
"""

from earmatch.annotations import (
    REF_LABELS,
    AnnotationDocument,
    aggregate_json,
    convert_json_to_txt,
    label_guide,
    list_annotated,
    read_annotation,
    write_annotation,
)
from earmatch.calibration import (
    CalibrationRecord,
    ConversionFactors,
    ReferenceDistance,
    average_factors,
    load_reference_factors,
    per_ear_factors,
    read_calibration_csv,
    read_cm_table,
    read_factors_csv,
    scale_from_reference,
    to_centimetres,
    write_calibration_csv,
    write_cm_table,
    write_factors_csv,
)
from earmatch.dataset import (
    AUGMENT_KINDS,
    Corpus,
    Sample,
    augment,
    augment_directory,
    expand_corpus,
    load_corpus,
    load_image,
    reframe_to_ear,
    save_image,
)
from earmatch.errors import (
    AnnotationFormatError,
    CalibrationDegenerateError,
    CalibrationFormatError,
    ConfigError,
    CorruptStlError,
    DatabaseFormatError,
    EarmatchError,
    EmptyCorpusError,
    EmptyDatabaseError,
    EmptyMeshError,
    IncompleteLandmarkSetError,
    InvalidLandmarkError,
    ModelFormatError,
    ShapeError,
    SizeMismatchError,
    StlError,
    StlFormatError,
)
from earmatch.landmarks import (
    DISTANCE_NAMES,
    DISTANCE_PAIRS,
    NORMALIZATION_CONSTANT,
    RELEVANT_LABELS,
    AnthroVector,
    Landmark,
    LandmarkSet,
    PixelDistanceVector,
    euclidean_distance,
    measure_distances,
    read_lm55,
    select_relevant,
    write_lm55,
)
from earmatch.matcher import (
    AnthroDatabase,
    EarRecord,
    MatchResult,
    best_match,
    format_match,
    load_database,
    match_report,
    resolve_hrtf,
    vector_distance,
    write_database,
)
from earmatch.meshrender import (
    CameraSpec,
    TriangleMesh,
    batch_render,
    mirror_raster,
    parse_stl,
    render_ear,
    save_raster,
)
from earmatch.net import (
    Sequential,
    TrainConfig,
    build_canonical_model,
    evaluate,
    load_model,
    predict_landmarks,
    save_model,
    train,
)

__all__ = [
    "REF_LABELS",
    "AnnotationDocument",
    "aggregate_json",
    "convert_json_to_txt",
    "label_guide",
    "list_annotated",
    "read_annotation",
    "write_annotation",
    "CalibrationRecord",
    "ConversionFactors",
    "ReferenceDistance",
    "average_factors",
    "load_reference_factors",
    "per_ear_factors",
    "read_calibration_csv",
    "read_cm_table",
    "read_factors_csv",
    "scale_from_reference",
    "to_centimetres",
    "write_calibration_csv",
    "write_cm_table",
    "write_factors_csv",
    "AUGMENT_KINDS",
    "Corpus",
    "Sample",
    "augment",
    "augment_directory",
    "expand_corpus",
    "load_corpus",
    "load_image",
    "reframe_to_ear",
    "save_image",
    "AnnotationFormatError",
    "CalibrationDegenerateError",
    "CalibrationFormatError",
    "ConfigError",
    "CorruptStlError",
    "DatabaseFormatError",
    "EarmatchError",
    "EmptyCorpusError",
    "EmptyDatabaseError",
    "EmptyMeshError",
    "IncompleteLandmarkSetError",
    "InvalidLandmarkError",
    "ModelFormatError",
    "ShapeError",
    "SizeMismatchError",
    "StlError",
    "StlFormatError",
    "DISTANCE_NAMES",
    "DISTANCE_PAIRS",
    "NORMALIZATION_CONSTANT",
    "RELEVANT_LABELS",
    "AnthroVector",
    "Landmark",
    "LandmarkSet",
    "PixelDistanceVector",
    "euclidean_distance",
    "measure_distances",
    "read_lm55",
    "select_relevant",
    "write_lm55",
    "AnthroDatabase",
    "EarRecord",
    "MatchResult",
    "best_match",
    "format_match",
    "load_database",
    "match_report",
    "resolve_hrtf",
    "vector_distance",
    "write_database",
    "CameraSpec",
    "TriangleMesh",
    "batch_render",
    "mirror_raster",
    "parse_stl",
    "render_ear",
    "save_raster",
    "Sequential",
    "TrainConfig",
    "build_canonical_model",
    "evaluate",
    "load_model",
    "predict_landmarks",
    "save_model",
    "train",
]
