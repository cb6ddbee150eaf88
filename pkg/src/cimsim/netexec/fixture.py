"""Desk-scale test fixtures: a blob-classification MLP and a toy attention block."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import LayerKind, LayerNode, Model

N_FEATURES = 16
N_HIDDEN = 32
N_CLASSES = 4
EVAL_SAMPLES = 2000


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def save(self, path) -> None:
        np.savez(path, x=self.x, y=self.y)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as f:
            return cls(f["x"], f["y"])

    def batches(self, size: int, count: int) -> list:
        return [self.x[i * size:(i + 1) * size] for i in range(count)]


def make_blobs(n: int, seed: int = 0, spread: float = 1.0, separation: float = 0.8) -> Dataset:
    """Isotropic Gaussian clusters around fixed class centres.

    Centres depend only on ``separation``; ``seed`` picks the samples.
    """
    centres = np.random.default_rng(1234).normal(0.0, separation, size=(N_CLASSES, N_FEATURES))
    rng = np.random.default_rng(seed)
    y = rng.integers(0, N_CLASSES, size=n)
    x = centres[y] + spread * rng.normal(size=(n, N_FEATURES))
    return Dataset(x, y)


def train_mlp(data: Dataset, hidden: int = N_HIDDEN, epochs: int = 400, lr: float = 0.2,
              seed: int = 0) -> tuple:
    """Full-batch gradient descent on softmax cross-entropy; returns (W1, b1, W2, b2)."""
    rng = np.random.default_rng(seed)
    n_in = data.x.shape[1]
    w1 = rng.normal(0, np.sqrt(2.0 / n_in), size=(n_in, hidden))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0, np.sqrt(2.0 / hidden), size=(hidden, N_CLASSES))
    b2 = np.zeros(N_CLASSES)
    onehot = np.eye(N_CLASSES)[data.y]
    n = data.x.shape[0]
    for _ in range(epochs):
        h_pre = data.x @ w1 + b1
        h = np.maximum(h_pre, 0)
        z = h @ w2 + b2
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        dz = (p - onehot) / n
        dw2 = h.T @ dz
        dh = dz @ w2.T * (h_pre > 0)
        dw1 = data.x.T @ dh
        w1 -= lr * dw1
        b1 -= lr * dh.sum(axis=0)
        w2 -= lr * dw2
        b2 -= lr * dz.sum(axis=0)
    return w1, b1, w2, b2


def mlp_model(w1, b1, w2, b2) -> Model:
    return Model([
        LayerNode("fc1", LayerKind.LINEAR, weight=w1, bias=b1),
        LayerNode("relu1", LayerKind.RELU),
        LayerNode("fc2", LayerKind.LINEAR, weight=w2, bias=b2),
    ])


@dataclass
class Fixture:
    model: Model
    train: Dataset
    eval: Dataset


def make_fixture(seed: int = 0, eval_samples: int = EVAL_SAMPLES, train_samples: int = 4000) -> Fixture:
    """Deterministic blobs dataset and trained 16-32-4 MLP (uncalibrated)."""
    train = make_blobs(train_samples, seed=seed)
    test = make_blobs(eval_samples, seed=seed + 1)
    return Fixture(mlp_model(*train_mlp(train, seed=seed)), train, test)


def attention_model(dim: int = 16, tokens: int = 8, seed: int = 0) -> Model:
    """Single-head self-attention: ACIM projections, DCIM score and aggregation, LUT softmax."""
    rng = np.random.default_rng(seed)

    def proj():
        return rng.normal(0, 1.0 / np.sqrt(dim), size=(dim, dim))

    return Model([
        LayerNode("q", LayerKind.LINEAR, inputs=("input",), weight=proj()),
        LayerNode("k", LayerKind.LINEAR, inputs=("input",), weight=proj()),
        LayerNode("v", LayerKind.LINEAR, inputs=("input",), weight=proj()),
        LayerNode("scores", LayerKind.DCIM_MATMUL, inputs=("q", "k"),
                  params={"transpose_b": True, "alpha": 1.0 / np.sqrt(dim)}),
        LayerNode("probs", LayerKind.LUT, params={"fn": "softmax"}),
        LayerNode("context", LayerKind.DCIM_MATMUL, inputs=("probs", "v")),
    ])
