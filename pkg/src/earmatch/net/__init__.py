"""From-scratch convolutional network engine for landmark regression."""

from earmatch.net.layers import (
    ADAM_EPSILON,
    BN_EPSILON,
    BN_MOMENTUM,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2D,
    layer_from_spec,
)
from earmatch.net.modelio import FORMAT_VERSION, load_model, save_model
from earmatch.net.network import (
    INPUT_SHAPE,
    OUTPUT_UNITS,
    ParameterCount,
    Sequential,
    build_canonical_model,
    model_from_specs,
)
from earmatch.net.training import (
    COORD_SCALE,
    DEFAULT_PCK_THRESHOLD_PX,
    Adam,
    EvalReport,
    TrainConfig,
    TrainHistory,
    compute_metrics,
    evaluate,
    loss_mse,
    pack_landmarks,
    predict_landmarks,
    train,
    unpack_landmarks,
)

__all__ = [
    "ADAM_EPSILON",
    "BN_EPSILON",
    "BN_MOMENTUM",
    "BatchNorm",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool2D",
    "layer_from_spec",
    "FORMAT_VERSION",
    "load_model",
    "save_model",
    "INPUT_SHAPE",
    "OUTPUT_UNITS",
    "ParameterCount",
    "Sequential",
    "build_canonical_model",
    "model_from_specs",
    "COORD_SCALE",
    "DEFAULT_PCK_THRESHOLD_PX",
    "Adam",
    "EvalReport",
    "TrainConfig",
    "TrainHistory",
    "compute_metrics",
    "evaluate",
    "loss_mse",
    "pack_landmarks",
    "predict_landmarks",
    "train",
    "unpack_landmarks",
]
