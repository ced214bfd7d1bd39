"""Softmax regression and a one-hidden-layer tanh MLP over flat parameter vectors.

Parameter layout (row-major blocks, layer by layer):

* ``softmax_regression``: ``W (input_dim x classes)``, then ``b (classes)``.
* ``mlp1``: ``W1 (input_dim x hidden)``, ``b1 (hidden)``,
  ``W2 (hidden x classes)``, ``b2 (classes)``.

Scores are ``features @ W + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MODEL_KINDS = ("softmax_regression", "mlp1")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.classes < 2:
            raise ValueError("need input_dim >= 1 and classes >= 2")
        if self.kind == "mlp1" and self.hidden < 1:
            raise ValueError("mlp1 needs hidden >= 1")

    @property
    def blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        d, k, h = self.input_dim, self.classes, self.hidden
        if self.kind == "softmax_regression":
            return [("W", (d, k)), ("b", (k,))]
        return [("W1", (d, h)), ("b1", (h,)), ("W2", (h, k)), ("b2", (k,))]

    @property
    def dim(self) -> int:
        return sum(math.prod(shape) for _, shape in self.blocks)

    def unflatten(self, x: np.ndarray) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {x.shape}, expected ({self.dim},)")
        out, pos = {}, 0
        for name, shape in self.blocks:
            size = math.prod(shape)
            out[name] = x[pos:pos + size].reshape(shape)
            pos += size
        return out

    def flatten(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(parts[name], dtype=np.float64).ravel() for name, _ in self.blocks])


def _check_batch(spec: ModelSpec, features, labels):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ValueError(f"features must have shape (n, {spec.input_dim}), got {features.shape}")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must be 1-D with one entry per feature row")
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    return features, labels.astype(np.int64)


def scores(spec: ModelSpec, params, features) -> np.ndarray:
    p = spec.unflatten(params)
    features = np.asarray(features, dtype=np.float64)
    if spec.kind == "softmax_regression":
        return features @ p["W"] + p["b"]
    return np.tanh(features @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]


def _log_softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(spec: ModelSpec, params, features, labels) -> float:
    """Mean cross-entropy. Summed with ``math.fsum`` so sample order cannot matter."""
    features, labels = _check_batch(spec, features, labels)
    logp = _log_softmax(scores(spec, params, features))
    return math.fsum(-logp[np.arange(labels.size), labels]) / labels.size


def loss_and_grad(spec: ModelSpec, params, features, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient w.r.t. ``params``."""
    features, labels = _check_batch(spec, features, labels)
    n = labels.size
    p = spec.unflatten(params)
    rows = np.arange(n)

    if spec.kind == "softmax_regression":
        s = features @ p["W"] + p["b"]
    else:
        h = np.tanh(features @ p["W1"] + p["b1"])
        s = h @ p["W2"] + p["b2"]

    logp = _log_softmax(s)
    value = math.fsum(-logp[rows, labels]) / n
    ds = np.exp(logp)
    ds[rows, labels] -= 1.0
    ds /= n

    if spec.kind == "softmax_regression":
        grads = {"W": features.T @ ds, "b": ds.sum(axis=0)}
    else:
        dh = (ds @ p["W2"].T) * (1.0 - h * h)
        grads = {
            "W1": features.T @ dh,
            "b1": dh.sum(axis=0),
            "W2": h.T @ ds,
            "b2": ds.sum(axis=0),
        }
    return value, spec.flatten(grads)


def predict(spec: ModelSpec, params, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the smallest class
    return np.argmax(scores(spec, params, features), axis=1)


def accuracy(spec: ModelSpec, params, features, labels) -> float:
    features, labels = _check_batch(spec, features, labels)
    return float(np.count_nonzero(predict(spec, params, features) == labels)) / labels.size


def init_params(spec: ModelSpec, rng, scale: float = 0.01) -> np.ndarray:
    return scale * rng.standard_normal(spec.dim)
