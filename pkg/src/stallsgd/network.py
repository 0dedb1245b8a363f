"""Two-layer logistic network with block-sparse hidden units (61 parameters).

Hidden unit ``i`` sees only features ``[10 i, 10 i + 10)``. The flat parameter
vector is laid out unit by unit, ``[w_i (10), b_i]`` for ``i = 0..4``,
followed by the output weights ``v (5)`` and output bias ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernels import BLOCK, N_FEATURES, N_HIDDEN, N_PARAMS, OUT_W

LOSSES = ("squared", "cross_entropy")


class Unpacked(NamedTuple):
    W: np.ndarray  # (5, 10)
    b: np.ndarray  # (5,)
    v: np.ndarray  # (5,)
    c: float


def unpack(params) -> Unpacked:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got shape {params.shape}")
    hidden = params[:OUT_W].reshape(N_HIDDEN, BLOCK + 1)
    return Unpacked(hidden[:, :BLOCK], hidden[:, BLOCK], params[OUT_W:OUT_W + N_HIDDEN], float(params[-1]))


def pack(W, b, v, c) -> np.ndarray:
    hidden = np.concatenate([np.asarray(W, float).reshape(N_HIDDEN, BLOCK), np.asarray(b, float).reshape(N_HIDDEN, 1)], axis=1)
    return np.concatenate([hidden.ravel(), np.asarray(v, float).ravel(), [float(c)]])


def feature_block(unit: int) -> range:
    return range(unit * BLOCK, (unit + 1) * BLOCK)


def init_params(seed: int) -> np.ndarray:
    """Shared starting point: every entry ``Unif(-0.5, 0.5)``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    return rng.uniform(-0.5, 0.5, size=N_PARAMS)


def logistic(t):
    """``1 / (1 + exp(-t))`` without overflow for large ``|t|``."""
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def _hidden(p: Unpacked, X):
    X = np.asarray(X, dtype=np.float64)
    blocks = X.reshape(*X.shape[:-1], N_HIDDEN, BLOCK)
    return logistic(np.einsum("...ij,ij->...i", blocks, p.W) + p.b)


def forward(params, features) -> float:
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (N_FEATURES,):
        raise ValueError(f"expected {N_FEATURES} features, got shape {features.shape}")
    p = unpack(params)
    h = _hidden(p, features)
    return logistic(h @ p.v + p.c)


def forward_batch(params, X) -> np.ndarray:
    p = unpack(params)
    h = _hidden(p, X)
    return logistic(h @ p.v + p.c)


def _loss_values(out, labels, loss):
    if loss == "squared":
        return (out - labels) ** 2
    if loss == "cross_entropy":
        tiny = np.finfo(np.float64).tiny
        return -(labels * np.log(np.maximum(out, tiny)) + (1 - labels) * np.log(np.maximum(1 - out, tiny)))
    raise ValueError(f"unknown loss {loss!r}")


def loss(params, features, label, loss: str = "squared") -> float:
    return float(_loss_values(forward(params, features), float(label), loss))


def _output_delta(out, labels, loss):
    if loss == "squared":
        return 2.0 * (out - labels) * out * (1.0 - out)
    if loss == "cross_entropy":
        return out - labels
    raise ValueError(f"unknown loss {loss!r}")


def _batch_grads(params, X, labels, loss):
    """Per-example gradients, shape ``(N, 61)``."""
    p = unpack(params)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    h = _hidden(p, X)
    out = logistic(h @ p.v + p.c)
    delta = _output_delta(out, labels, loss)
    dz = delta[:, None] * p.v * h * (1.0 - h)
    n = X.shape[0]
    grads = np.empty((n, N_PARAMS))
    hidden = grads[:, :OUT_W].reshape(n, N_HIDDEN, BLOCK + 1)
    hidden[:, :, :BLOCK] = dz[:, :, None] * X.reshape(n, N_HIDDEN, BLOCK)
    hidden[:, :, BLOCK] = dz
    grads[:, OUT_W:OUT_W + N_HIDDEN] = delta[:, None] * h
    grads[:, -1] = delta
    return grads


def backprop_grad(params, features, label, loss: str = "squared") -> np.ndarray:
    """Exact gradient of the per-example loss with respect to all 61 parameters."""
    return _batch_grads(params, features, label, loss)[0]


@dataclass(frozen=True)
class DatasetMetrics:
    mean_loss: float
    misclassification_rate: float
    total_gradient_norm: float


def mean_loss(params, X, labels, loss: str = "squared") -> float:
    return float(np.mean(_loss_values(forward_batch(params, X), np.asarray(labels, float), loss)))


def total_gradient(params, X, labels, loss: str = "squared", batch: int = 16384) -> np.ndarray:
    """Gradient of the mean loss over the dataset, summed in fixed-size blocks."""
    n = len(labels)
    acc = np.zeros(N_PARAMS)
    for lo in range(0, n, batch):
        acc += _batch_grads(params, X[lo:lo + batch], labels[lo:lo + batch], loss).sum(axis=0)
    return acc / n


def dataset_metrics(params, X, labels, loss: str = "squared") -> DatasetMetrics:
    labels = np.asarray(labels, dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("dataset is empty")
    out = forward_batch(params, X)
    predicted = (out >= 0.5).astype(np.float64)
    return DatasetMetrics(
        float(np.mean(_loss_values(out, labels, loss))),
        float(np.mean(predicted != labels)),
        float(np.linalg.norm(total_gradient(params, X, labels, loss))),
    )
