"""Adam training on mean squared error, evaluation metrics and prediction.

Training targets are landmark coordinates divided by 224 so they lie in
[0, 1]; predictions are mapped back to pixels by the inverse scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from earmatch.errors import EmptyCorpusError, SizeMismatchError, TrainingDivergedError
from earmatch.landmarks import FULL_SET_SIZE, Landmark, LandmarkSet
from earmatch.net.layers import ADAM_EPSILON
from earmatch.net.network import Sequential

COORD_SCALE = 224.0
OUTPUT_SIZE = 2 * FULL_SET_SIZE
DEFAULT_PCK_THRESHOLD_PX = 10.0

_EVAL_BATCH = 16


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.0
    epochs: int = 300
    batch_size: int = 64
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if self.decay < 0.0:
            raise ValueError("decay must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


class EvalReport(NamedTuple):
    loss: float
    mean_radial_error_px: float
    pck: float


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    metrics: list[EvalReport] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)


class Adam:
    """Adam with bias correction and an optional per-step 1/(1+decay*t) rate."""

    def __init__(
        self,
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        decay: float = 0.0,
        epsilon: float = ADAM_EPSILON,
    ) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.decay = decay
        self.epsilon = epsilon
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    @classmethod
    def from_config(cls, config: TrainConfig) -> "Adam":
        return cls(config.learning_rate, config.beta1, config.beta2, config.decay)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params and grads must align")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(self._m) != len(params):
            raise ValueError("optimizer bound to a different parameter list")
        lr = self.learning_rate / (1.0 + self.decay * self.t)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise SizeMismatchError(f"prediction shape {pred.shape} != target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def _mse_with_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def pack_landmarks(landmarks: LandmarkSet) -> np.ndarray:
    """Full landmark set -> length-110 target (x0, y0, x1, y1, ...) / 224."""
    landmarks.require_full()
    coords = landmarks.to_array()
    return (coords / COORD_SCALE).reshape(-1)


def unpack_landmarks(vector: np.ndarray, image_size: tuple[int, int] = (224, 224)) -> LandmarkSet:
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vector.size != OUTPUT_SIZE:
        raise SizeMismatchError(f"expected {OUTPUT_SIZE} values, got {vector.size}")
    coords = vector.reshape(FULL_SET_SIZE, 2) * COORD_SCALE
    points = [Landmark(i, float(x), float(y)) for i, (x, y) in enumerate(coords)]
    return LandmarkSet(points, image_size=image_size)


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Accept (images, targets) arrays or a sequence of dataset samples."""
    if isinstance(samples, tuple) and len(samples) == 2:
        images, targets = samples
        images = np.asarray(images, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
    else:
        samples = list(samples)
        if not samples:
            raise EmptyCorpusError("no samples to process")
        images = np.stack([np.asarray(s.image, dtype=np.float64) for s in samples])
        targets = np.stack([pack_landmarks(s.landmarks) for s in samples])
    if images.shape[0] == 0:
        raise EmptyCorpusError("no samples to process")
    if images.shape[0] != targets.shape[0]:
        raise SizeMismatchError(
            f"{images.shape[0]} images but {targets.shape[0]} target rows"
        )
    return images, targets


def train(
    model: Sequential,
    samples,
    config: TrainConfig | None = None,
    eval_samples=None,
    log: Callable[[str], None] | None = None,
) -> tuple[Sequential, TrainHistory]:
    """Run Adam over the samples for config.epochs; model updates in place."""
    config = config or TrainConfig()
    images, targets = _as_arrays(samples)
    order_rng = np.random.default_rng(config.seed)
    model.reseed(config.seed + 1)  # dropout masks, decoupled from shuffling
    optimizer = Adam.from_config(config)
    names_params = list(model.trainable_tensors())
    params = [tensor for _, tensor in names_params]
    history = TrainHistory()
    checkpoint = model.get_weights()
    n = images.shape[0]
    for epoch in range(config.epochs):
        order = order_rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            pred = model.forward(images[batch], training=True)
            loss, dpred = _mse_with_grad(pred, targets[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}",
                    checkpoint=checkpoint,
                    history=history,
                )
            model.backward(dpred)
            grads = [grad for _, grad in model.gradient_tensors()]
            optimizer.step(params, grads)
            total += loss * len(batch)
        epoch_loss = total / n
        history.losses.append(epoch_loss)
        line = f"epoch={epoch + 1} loss={epoch_loss:.8f}"
        if eval_samples is not None:
            report = evaluate(model, eval_samples)
            history.metrics.append(report)
            line += (
                f" val_loss={report.loss:.8f}"
                f" radial_px={report.mean_radial_error_px:.4f} pck={report.pck:.4f}"
            )
        if log is not None:
            log(line)
        checkpoint = model.get_weights()
    return model, history


def compute_metrics(
    pred: np.ndarray,
    target: np.ndarray,
    pck_threshold_px: float = DEFAULT_PCK_THRESHOLD_PX,
) -> EvalReport:
    """Metrics from normalized prediction/target matrices of shape (n, 110)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise SizeMismatchError(f"prediction shape {pred.shape} != target {target.shape}")
    if pred.size == 0:
        raise EmptyCorpusError("no predictions to score")
    loss = loss_mse(pred, target)
    delta_px = (pred - target).reshape(pred.shape[0], -1, 2) * COORD_SCALE
    radial = np.sqrt((delta_px * delta_px).sum(axis=2))
    return EvalReport(
        loss=loss,
        mean_radial_error_px=float(radial.mean()),
        pck=float((radial <= pck_threshold_px).mean()),
    )


def evaluate(
    model: Sequential,
    samples,
    pck_threshold_px: float = DEFAULT_PCK_THRESHOLD_PX,
) -> EvalReport:
    images, targets = _as_arrays(samples)
    preds = np.empty_like(targets)
    for start in range(0, images.shape[0], _EVAL_BATCH):
        stop = start + _EVAL_BATCH
        preds[start:stop] = model.forward(images[start:stop], training=False)
    return compute_metrics(preds, targets, pck_threshold_px)


def predict_landmarks(model: Sequential, image: np.ndarray) -> LandmarkSet:
    """Run one image through the model and de-normalize to pixel landmarks."""
    image = np.asarray(image, dtype=np.float64)
    vector = model.forward(image[None, ...], training=False)[0]
    return unpack_landmarks(vector, image_size=(image.shape[1], image.shape[0]))
