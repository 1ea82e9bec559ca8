"""Network layers with forward and reverse-mode passes on float64 arrays.

Data layout is channels-last: activations are (batch, height, width, channels)
for spatial layers and (batch, features) after flattening.  Shapes passed to
``build`` and reported by layers exclude the batch dimension.
"""

from __future__ import annotations

import math

import numpy as np

from earmatch.errors import ShapeError

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99
ADAM_EPSILON = 1e-8

# im2col buffer budget per chunk; keeps peak memory flat on large batches
_CHUNK_BYTES = 64 << 20

_ACTIVATIONS = ("linear", "relu")


def _check_activation(activation: str) -> str:
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    return activation


class Layer:
    """Base class: allocate in build(), then forward/backward in lockstep."""

    kind = "layer"

    def __init__(self) -> None:
        self.name = ""
        self.input_shape: tuple[int, ...] | None = None
        self.output_shape: tuple[int, ...] | None = None
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.rng: np.random.Generator = np.random.default_rng(0)

    def build(self, input_shape: tuple[int, ...], rng: np.random.Generator) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _shape_error(self, message: str) -> ShapeError:
        return ShapeError(self.name or self.kind, message)

    def _check_input(self, x: np.ndarray) -> None:
        if self.input_shape is None:
            raise self._shape_error("layer used before build()")
        if x.shape[1:] != self.input_shape:
            raise self._shape_error(
                f"expected input {self.input_shape}, got {x.shape[1:]}"
            )


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """Stack every kernel-sized patch of x as a row block: (n, oh, ow, k*k*c)."""
    n, h, w, c = x.shape
    oh, ow = h - kernel + 1, w - kernel + 1
    cols = np.empty((n, oh, ow, kernel * kernel * c), dtype=x.dtype)
    slot = 0
    for di in range(kernel):
        for dj in range(kernel):
            cols[..., slot * c : (slot + 1) * c] = x[:, di : di + oh, dj : dj + ow, :]
            slot += 1
    return cols


def _col2im(dcols: np.ndarray, kernel: int, h: int, w: int, c: int) -> np.ndarray:
    """Scatter-add patch gradients back onto the input plane."""
    n, oh, ow, _ = dcols.shape
    dx = np.zeros((n, h, w, c), dtype=dcols.dtype)
    slot = 0
    for di in range(kernel):
        for dj in range(kernel):
            dx[:, di : di + oh, dj : dj + ow, :] += dcols[..., slot * c : (slot + 1) * c]
            slot += 1
    return dx


class Conv2D(Layer):
    """Valid-padding stride-1 convolution with an optional fused ReLU."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel_size: int, activation: str = "relu") -> None:
        super().__init__()
        if filters < 1:
            raise ValueError("filters must be positive")
        if kernel_size < 1:
            raise ValueError("kernel_size must be positive")
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)
        self.activation = _check_activation(activation)
        self._x: np.ndarray | None = None
        self._relu_mask: np.ndarray | None = None

    def build(self, input_shape, rng):
        if len(input_shape) != 3:
            raise self._shape_error(f"expected (h, w, c) input, got {input_shape}")
        h, w, c = input_shape
        k = self.kernel_size
        if h < k or w < k:
            raise self._shape_error(f"input {input_shape} smaller than {k}x{k} kernel")
        fan_in = k * k * c
        self.params = {
            "W": _he_uniform(rng, (k, k, c, self.filters), fan_in),
            "b": np.zeros(self.filters),
        }
        self.input_shape = tuple(input_shape)
        self.output_shape = (h - k + 1, w - k + 1, self.filters)
        return self.output_shape

    def _chunk_size(self) -> int:
        oh, ow, _ = self.output_shape
        k = self.kernel_size
        c = self.input_shape[2]
        per_sample = oh * ow * k * k * c * 8
        return max(1, _CHUNK_BYTES // max(1, per_sample))

    def forward(self, x, training=False):
        self._check_input(x)
        n = x.shape[0]
        oh, ow, f = self.output_shape
        k = self.kernel_size
        w_mat = self.params["W"].reshape(-1, f)
        out = np.empty((n, oh, ow, f))
        for start in range(0, n, self._chunk_size()):
            stop = min(n, start + self._chunk_size())
            cols = _im2col(x[start:stop], k)
            flat = cols.reshape(-1, w_mat.shape[0]) @ w_mat + self.params["b"]
            out[start:stop] = flat.reshape(stop - start, oh, ow, f)
            del cols
        if self.activation == "relu":
            self._relu_mask = out > 0.0
            out *= self._relu_mask
        self._x = x
        return out

    def backward(self, grad):
        x = self._x
        if x is None:
            raise RuntimeError("backward() before forward()")
        if self.activation == "relu":
            grad = grad * self._relu_mask
        n = x.shape[0]
        k = self.kernel_size
        h, w, c = self.input_shape
        f = self.filters
        w_mat = self.params["W"].reshape(-1, f)
        d_wmat = np.zeros_like(w_mat)
        dx = np.empty_like(x)
        for start in range(0, n, self._chunk_size()):
            stop = min(n, start + self._chunk_size())
            cols = _im2col(x[start:stop], k).reshape(-1, w_mat.shape[0])
            g = grad[start:stop].reshape(-1, f)
            d_wmat += cols.T @ g
            dcols = (g @ w_mat.T).reshape(stop - start, h - k + 1, w - k + 1, -1)
            dx[start:stop] = _col2im(dcols, k, h, w, c)
            del cols, dcols
        self.grads = {
            "W": d_wmat.reshape(self.params["W"].shape),
            "b": grad.sum(axis=(0, 1, 2)),
        }
        return dx

    def spec(self):
        return {
            "kind": self.kind,
            "filters": self.filters,
            "kernel_size": self.kernel_size,
            "activation": self.activation,
        }


class MaxPool2D(Layer):
    """Non-overlapping max pooling; odd trailing rows/columns are dropped."""

    kind = "maxpool2d"

    def __init__(self, pool_size: int = 2) -> None:
        super().__init__()
        if pool_size < 1:
            raise ValueError("pool_size must be positive")
        self.pool_size = int(pool_size)
        self._argmax: np.ndarray | None = None
        self._n: int = 0

    def build(self, input_shape, rng):
        if len(input_shape) != 3:
            raise self._shape_error(f"expected (h, w, c) input, got {input_shape}")
        h, w, c = input_shape
        p = self.pool_size
        if h < p or w < p:
            raise self._shape_error(f"input {input_shape} smaller than pool {p}")
        self.input_shape = tuple(input_shape)
        self.output_shape = (h // p, w // p, c)
        return self.output_shape

    def _windows(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        oh, ow, c = self.output_shape
        p = self.pool_size
        cropped = x[:, : oh * p, : ow * p, :]
        win = cropped.reshape(n, oh, p, ow, p, c).transpose(0, 1, 3, 2, 4, 5)
        return win.reshape(n, oh, ow, p * p, c)

    def forward(self, x, training=False):
        self._check_input(x)
        win = self._windows(x)
        # ties resolve to the first window position, matching argmax
        self._argmax = np.argmax(win, axis=3)
        self._n = x.shape[0]
        return np.max(win, axis=3)

    def backward(self, grad):
        if self._argmax is None:
            raise RuntimeError("backward() before forward()")
        n = self._n
        oh, ow, c = self.output_shape
        h, w, _ = self.input_shape
        p = self.pool_size
        dwin = np.zeros((n, oh, ow, p * p, c), dtype=grad.dtype)
        np.put_along_axis(dwin, self._argmax[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        dwin = dwin.reshape(n, oh, ow, p, p, c).transpose(0, 1, 3, 2, 4, 5)
        dx = np.zeros((n, h, w, c), dtype=grad.dtype)
        dx[:, : oh * p, : ow * p, :] = dwin.reshape(n, oh * p, ow * p, c)
        return dx

    def spec(self):
        return {"kind": self.kind, "pool_size": self.pool_size}


class BatchNorm(Layer):
    """Per-channel normalization over batch and spatial axes, channels last."""

    kind = "batchnorm"

    def __init__(self, epsilon: float = BN_EPSILON, momentum: float = BN_MOMENTUM) -> None:
        super().__init__()
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self._axes: tuple[int, ...] = (0,)
        self._xhat: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def build(self, input_shape, rng):
        if len(input_shape) < 1:
            raise self._shape_error("batchnorm needs at least one feature axis")
        channels = input_shape[-1]
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.state = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self._axes = tuple(range(len(input_shape)))  # batch + spatial axes
        self.input_shape = tuple(input_shape)
        self.output_shape = tuple(input_shape)
        return self.output_shape

    def forward(self, x, training=False):
        self._check_input(x)
        if training:
            mean = x.mean(axis=self._axes)
            var = x.var(axis=self._axes)  # biased, matching the normalizer
            self.state["running_mean"] *= self.momentum
            self.state["running_mean"] += (1.0 - self.momentum) * mean
            self.state["running_var"] *= self.momentum
            self.state["running_var"] += (1.0 - self.momentum) * var
        else:
            mean = self.state["running_mean"]
            var = self.state["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        if training:
            self._xhat = xhat
            self._inv_std = inv_std
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, grad):
        xhat, inv_std = self._xhat, self._inv_std
        if xhat is None:
            raise RuntimeError("backward() before forward(training=True)")
        axes = self._axes
        m = 1
        for ax in axes:
            m *= xhat.shape[ax]
        self.grads = {
            "gamma": (grad * xhat).sum(axis=axes),
            "beta": grad.sum(axis=axes),
        }
        dxhat = grad * self.params["gamma"]
        dx = (
            dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes) / m
        ) * inv_std
        return dx

    def spec(self):
        return {"kind": self.kind, "epsilon": self.epsilon, "momentum": self.momentum}


class Dropout(Layer):
    """Inverted dropout: active only in training, identity at inference."""

    kind = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("rate must be in [0, 1)")
        self.rate = float(rate)
        self._mask: np.ndarray | None = None

    def build(self, input_shape, rng):
        self.input_shape = tuple(input_shape)
        self.output_shape = tuple(input_shape)
        return self.output_shape

    def forward(self, x, training=False):
        self._check_input(x)
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def __init__(self) -> None:
        super().__init__()

    def build(self, input_shape, rng):
        size = 1
        for dim in input_shape:
            size *= dim
        self.input_shape = tuple(input_shape)
        self.output_shape = (size,)
        return self.output_shape

    def forward(self, x, training=False):
        self._check_input(x)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape((grad.shape[0],) + self.input_shape)

    def spec(self):
        return {"kind": self.kind}


class Dense(Layer):
    """Fully connected layer with an optional fused ReLU."""

    kind = "dense"

    def __init__(self, units: int, activation: str = "linear") -> None:
        super().__init__()
        if units < 1:
            raise ValueError("units must be positive")
        self.units = int(units)
        self.activation = _check_activation(activation)
        self._x: np.ndarray | None = None
        self._relu_mask: np.ndarray | None = None

    def build(self, input_shape, rng):
        if len(input_shape) != 1:
            raise self._shape_error(f"expected flat input, got {input_shape}")
        fan_in = input_shape[0]
        self.params = {
            "W": _he_uniform(rng, (fan_in, self.units), fan_in),
            "b": np.zeros(self.units),
        }
        self.input_shape = tuple(input_shape)
        self.output_shape = (self.units,)
        return self.output_shape

    def forward(self, x, training=False):
        self._check_input(x)
        out = x @ self.params["W"] + self.params["b"]
        if self.activation == "relu":
            self._relu_mask = out > 0.0
            out *= self._relu_mask
        self._x = x
        return out

    def backward(self, grad):
        x = self._x
        if x is None:
            raise RuntimeError("backward() before forward()")
        if self.activation == "relu":
            grad = grad * self._relu_mask
        self.grads = {"W": x.T @ grad, "b": grad.sum(axis=0)}
        return grad @ self.params["W"].T

    def spec(self):
        return {"kind": self.kind, "units": self.units, "activation": self.activation}


_LAYER_KINDS = {
    "conv2d": Conv2D,
    "maxpool2d": MaxPool2D,
    "batchnorm": BatchNorm,
    "dropout": Dropout,
    "flatten": Flatten,
    "dense": Dense,
}


def layer_from_spec(spec: dict) -> Layer:
    """Rebuild an unbuilt layer from its spec() dictionary."""
    options = dict(spec)
    kind = options.pop("kind", None)
    cls = _LAYER_KINDS.get(kind)
    if cls is None:
        raise ValueError(f"unknown layer kind {kind!r}")
    return cls(**options)
