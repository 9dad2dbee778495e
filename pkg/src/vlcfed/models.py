"""Small classification models with hand-derived gradients.

Two models cover the simulator's needs: multinomial logistic regression and
a one-hidden-layer tanh MLP.  Parameters live in a single flat float64
vector so they can be compressed like any other model update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class ModelSpec:
    name: str  # "logistic" or "mlp"
    hidden: int = 32

    @classmethod
    def parse(cls, obj) -> "ModelSpec":
        if isinstance(obj, str):
            obj = {"type": obj}
        name = obj.get("type", "logistic")
        if name not in ("logistic", "mlp"):
            raise InvalidInput(f"unknown model type {name!r}")
        return cls(name=name, hidden=int(obj.get("hidden", 32)))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _ce_loss(probs: np.ndarray, y: np.ndarray) -> float:
    n = y.size
    return float(-np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean())


class LogisticModel:
    """Multinomial logistic regression: W (f x c) and bias c, flattened."""

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes
        self.dim = n_features * n_classes + n_classes

    def init(self, rng: np.random.Generator) -> np.ndarray:
        w = rng.normal(0.0, 1.0 / np.sqrt(self.n_features), size=self.n_features * self.n_classes)
        return np.concatenate([w, np.zeros(self.n_classes)])

    def _unpack(self, w: np.ndarray):
        f, c = self.n_features, self.n_classes
        return w[: f * c].reshape(f, c), w[f * c:]

    def loss_and_grad(self, w: np.ndarray, x: np.ndarray, y: np.ndarray):
        weights, bias = self._unpack(w)
        probs = _softmax(x @ weights + bias)
        n = y.size
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grad = np.concatenate([(x.T @ delta).ravel(), delta.sum(axis=0)])
        return _ce_loss(probs, y), grad

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        weights, bias = self._unpack(w)
        return _ce_loss(_softmax(x @ weights + bias), y)

    def predict(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        weights, bias = self._unpack(w)
        return np.argmax(x @ weights + bias, axis=1)


class MlpModel:
    """One tanh hidden layer; tanh keeps finite-difference checks clean."""

    def __init__(self, n_features: int, hidden: int, n_classes: int):
        self.n_features = n_features
        self.hidden = hidden
        self.n_classes = n_classes
        self.dim = n_features * hidden + hidden + hidden * n_classes + n_classes

    def init(self, rng: np.random.Generator) -> np.ndarray:
        f, h, c = self.n_features, self.hidden, self.n_classes
        w1 = rng.normal(0.0, 1.0 / np.sqrt(f), size=f * h)
        w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=h * c)
        return np.concatenate([w1, np.zeros(h), w2, np.zeros(c)])

    def _unpack(self, w: np.ndarray):
        f, h, c = self.n_features, self.hidden, self.n_classes
        i = 0
        w1 = w[i:i + f * h].reshape(f, h); i += f * h
        b1 = w[i:i + h]; i += h
        w2 = w[i:i + h * c].reshape(h, c); i += h * c
        b2 = w[i:i + c]
        return w1, b1, w2, b2

    def loss_and_grad(self, w: np.ndarray, x: np.ndarray, y: np.ndarray):
        w1, b1, w2, b2 = self._unpack(w)
        hidden = np.tanh(x @ w1 + b1)
        probs = _softmax(hidden @ w2 + b2)
        n = y.size
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        g_w2 = hidden.T @ delta
        g_b2 = delta.sum(axis=0)
        back = (delta @ w2.T) * (1.0 - hidden**2)
        g_w1 = x.T @ back
        g_b1 = back.sum(axis=0)
        grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
        return _ce_loss(probs, y), grad

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        w1, b1, w2, b2 = self._unpack(w)
        hidden = np.tanh(x @ w1 + b1)
        return _ce_loss(_softmax(hidden @ w2 + b2), y)

    def predict(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(w)
        hidden = np.tanh(x @ w1 + b1)
        return np.argmax(hidden @ w2 + b2, axis=1)


def make_model(spec: ModelSpec, n_features: int, n_classes: int):
    if spec.name == "logistic":
        return LogisticModel(n_features, n_classes)
    return MlpModel(n_features, spec.hidden, n_classes)
