"""Sequential model container, the canonical 20-layer builder and accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from earmatch.errors import ShapeError
from earmatch.net.layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2D,
    layer_from_spec,
)

INPUT_SHAPE = (224, 224, 3)
OUTPUT_UNITS = 110

_NAME_PREFIXES = {
    "conv2d": "conv",
    "maxpool2d": "pool",
    "batchnorm": "bn",
    "dropout": "drop",
    "flatten": "flatten",
    "dense": "dense",
}


@dataclass(frozen=True)
class ParameterCount:
    total: int
    trainable: int
    non_trainable: int


class Sequential:
    """An ordered stack of layers built once for a fixed input shape."""

    def __init__(self, layers: Sequence[Layer], input_shape: tuple[int, ...], seed: int = 0):
        if not layers:
            raise ValueError("model needs at least one layer")
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.rng = np.random.default_rng(seed)
        counters: dict[str, int] = {}
        shape = self.input_shape
        self._trace: list[tuple[str, tuple[int, ...]]] = []
        for layer in self.layers:
            prefix = _NAME_PREFIXES.get(layer.kind, layer.kind)
            counters[prefix] = counters.get(prefix, 0) + 1
            layer.name = f"{prefix}{counters[prefix]}"
            layer.rng = self.rng
            shape = layer.build(shape, self.rng)
            self._trace.append((layer.name, shape))
        self.output_shape = shape

    def reseed(self, seed: int) -> None:
        """Reset the generator feeding dropout masks; init weights keep."""
        self.rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.rng = self.rng

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                self.layers[0].name,
                f"expected input {self.input_shape}, got {x.shape[1:]}",
            )
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, training=False)

    # --- parameter access -------------------------------------------------

    def trainable_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for layer in self.layers:
            for key in sorted(layer.params):
                yield f"{layer.name}/{key}", layer.params[key]

    def state_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for layer in self.layers:
            for key in sorted(layer.state):
                yield f"{layer.name}/{key}", layer.state[key]

    def all_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.trainable_tensors()
        yield from self.state_tensors()

    def gradient_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for layer in self.layers:
            for key in sorted(layer.params):
                yield f"{layer.name}/{key}", layer.grads[key]

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        layer_name, _, key = name.partition("/")
        for layer in self.layers:
            if layer.name != layer_name:
                continue
            store = layer.params if key in layer.params else layer.state
            if key not in store:
                break
            if store[key].shape != value.shape:
                raise ShapeError(
                    layer_name, f"tensor {name} has shape {store[key].shape}, got {value.shape}"
                )
            store[key][...] = value
            return
        raise KeyError(name)

    def get_weights(self) -> dict[str, np.ndarray]:
        return {name: tensor.copy() for name, tensor in self.all_tensors()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        for name, value in weights.items():
            self.set_tensor(name, value)

    # --- accounting ---------------------------------------------------------

    def parameter_table(self) -> list[tuple[str, int]]:
        """Per-layer totals, counting trainable and running statistics alike."""
        rows = []
        for layer in self.layers:
            count = sum(t.size for t in layer.params.values())
            count += sum(t.size for t in layer.state.values())
            rows.append((layer.name, count))
        return rows

    def parameter_counts(self) -> ParameterCount:
        trainable = sum(t.size for _, t in self.trainable_tensors())
        non_trainable = sum(t.size for _, t in self.state_tensors())
        return ParameterCount(trainable + non_trainable, trainable, non_trainable)

    def shape_trace(self) -> list[tuple[str, tuple[int, ...]]]:
        """Output shape after every layer, batch dimension excluded."""
        return list(self._trace)

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]


def model_from_specs(specs: Iterable[dict], input_shape: Sequence[int], seed: int = 0) -> Sequential:
    layers = [layer_from_spec(spec) for spec in specs]
    return Sequential(layers, tuple(input_shape), seed=seed)


def build_canonical_model(seed: int = 0) -> Sequential:
    """The fixed 20-layer landmark regression network on 224x224x3 input."""
    layers = [
        Conv2D(16, 3, activation="relu"),
        Conv2D(32, 3, activation="relu"),
        MaxPool2D(2),
        Conv2D(64, 3, activation="relu"),
        MaxPool2D(2),
        Conv2D(128, 3, activation="relu"),
        BatchNorm(),
        MaxPool2D(2),
        Dropout(0.3),
        Conv2D(256, 5, activation="relu"),
        MaxPool2D(2),
        Conv2D(512, 5, activation="relu"),
        BatchNorm(),
        MaxPool2D(2),
        Dropout(0.5),
        Flatten(),
        Dense(1024, activation="relu"),
        BatchNorm(),
        Dropout(0.7),
        Dense(OUTPUT_UNITS, activation="linear"),
    ]
    return Sequential(layers, INPUT_SHAPE, seed=seed)
