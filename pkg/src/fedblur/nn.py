"""Dense multilayer perceptrons with exact backpropagation.

Parameters live in a :class:`~fedblur.params.ParamVector` with layers named
``W0, b0, W1, b1, ...``; ``Wk`` has shape ``(fan_out, fan_in)``. Everything is
float64 so finite-difference checks are meaningful at 1e-5 relative error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .params import ParamVector

ACTIVATIONS = ("relu", "identity")
LOSSES = ("cross_entropy", "mse")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: object


@dataclass
class MlpModel:
    """An MLP architecture plus its current parameters."""

    sizes: tuple[int, ...]
    activation: str = "relu"
    loss: str = "cross_entropy"
    params: ParamVector = field(default=None, repr=False)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ConfigError(f"invalid layer sizes {self.sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.params is None:
            self.params = ParamVector(self.layout())
        else:
            self.params.check_layout(ParamVector(self.layout()))

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def validate_data(self, X, y):
        """Checked, converted ``(X, y)``; raises :class:`ConfigError` on mismatch."""
        return self._check_batch(X, y)

    def layout(self) -> list[tuple[str, int]]:
        layout = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            layout.append((f"W{k}", fan_in * fan_out))
            layout.append((f"b{k}", fan_out))
        return layout

    def init_params(self, seed) -> ParamVector:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            layers.append((f"W{k}", rng.uniform(-bound, bound, size=fan_in * fan_out)))
            layers.append((f"b{k}", rng.uniform(-bound, bound, size=fan_out)))
        self.params = ParamVector.from_layers(layers)
        return self.params

    def with_params(self, params: ParamVector) -> "MlpModel":
        return MlpModel(self.sizes, self.activation, self.loss, params)

    def _unpack(self, params: ParamVector):
        if params.layout is not self.params.layout:
            params.check_layout(self.params)
        out = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W = params.layer(2 * k).reshape(fan_out, fan_in)
            b = params.layer(2 * k + 1)
            out.append((W, b))
        return out

    def _check_batch(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ConfigError("batch must be a non-empty 2-D feature array")
        if X.shape[1] != self.n_inputs:
            raise ConfigError(f"feature dimension {X.shape[1]} != model input size {self.n_inputs}")
        if self.loss == "cross_entropy":
            y = np.asarray(y, dtype=np.int64).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise ConfigError("label count does not match batch size")
            if y.size and (y.min() < 0 or y.max() >= self.n_outputs):
                raise ConfigError("class label out of range")
        else:
            y = np.asarray(y, dtype=np.float64)
            if y.ndim == 1:
                y = y.reshape(-1, 1)
            if y.shape != (X.shape[0], self.n_outputs):
                raise ConfigError(f"target shape {y.shape} != {(X.shape[0], self.n_outputs)}")
        return X, y

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def logits(self, X, params: ParamVector | None = None) -> np.ndarray:
        params = self.params if params is None else params
        a = np.asarray(X, dtype=np.float64)
        layers = self._unpack(params)
        for k, (W, b) in enumerate(layers):
            z = a @ W.T + b
            a = z if k == len(layers) - 1 else self._act(z)
        return a

    def _loss_from_output(self, z, y):
        if self.loss == "cross_entropy":
            lse = _logsumexp_rows(z)[:, 0]
            return float(np.mean(lse - z[np.arange(z.shape[0]), y]))
        return float(np.mean(0.5 * np.sum((z - y) ** 2, axis=1)))

    def loss_value(self, params: ParamVector, X, y) -> float:
        X, y = self._check_batch(X, y)
        return self._loss_from_output(self.logits(X, params), y)

    def loss_and_grad(self, params: ParamVector, X, y, validate: bool = True) -> tuple[float, ParamVector]:
        """Mean batch loss and its exact gradient with respect to ``params``.

        ``validate=False`` skips shape and label checks for callers that already
        validated the data they slice batches from.
        """
        if validate:
            X, y = self._check_batch(X, y)
        layers = self._unpack(params)
        n = X.shape[0]
        acts = [X]
        pre = []
        a = X
        for k, (W, b) in enumerate(layers):
            z = a @ W.T + b
            pre.append(z)
            a = z if k == len(layers) - 1 else self._act(z)
            if k < len(layers) - 1:
                acts.append(a)
        z = pre[-1]
        if self.loss == "cross_entropy":
            rows = np.arange(n)
            lse = _logsumexp_rows(z)
            loss = float((lse[:, 0] - z[rows, y]).sum() / n)
            dz = np.exp(z - lse)
            dz[rows, y] -= 1.0
            dz /= n
        else:
            resid = z - y
            loss = float(np.mean(0.5 * np.sum(resid**2, axis=1)))
            dz = resid / n
        grad = params.like(np.empty(params.total_dim))
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grad.layer(2 * k)[:] = (dz.T @ acts[k]).reshape(-1)
            grad.layer(2 * k + 1)[:] = dz.sum(axis=0)
            if k > 0:
                da = dz @ W
                dz = da * (pre[k - 1] > 0) if self.activation == "relu" else da
        return loss, grad

    def accuracy(self, X, y, params: ParamVector | None = None) -> float:
        pred = np.argmax(self.logits(X, params), axis=1)
        y = np.asarray(y)
        if y.ndim > 1:
            y = np.argmax(y, axis=1)
        return float(np.mean(pred == y))


def _logsumexp_rows(z):
    top = np.max(z, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return top + np.log(np.sum(np.exp(z - top), axis=1, keepdims=True))


def _as_arrays(batch):
    if isinstance(batch, tuple) and len(batch) == 2:
        return batch
    if not batch:
        raise ConfigError("batch must be non-empty")
    X = np.stack([np.asarray(s.features, dtype=np.float64) for s in batch])
    y = np.asarray([s.label for s in batch])
    return X, y


def forward_loss(model: MlpModel, batch: Sequence[Sample] | tuple) -> float:
    """Mean loss of ``model`` over ``batch`` (a list of samples or an ``(X, y)`` pair)."""
    X, y = _as_arrays(batch)
    return model.loss_value(model.params, X, y)


def backward(model: MlpModel, batch: Sequence[Sample] | tuple) -> ParamVector:
    """Gradient of :func:`forward_loss` with respect to ``model.params``."""
    X, y = _as_arrays(batch)
    return model.loss_and_grad(model.params, X, y)[1]
