"""Multinomial logistic regression on flat parameter vectors.

Models are dense float64 vectors holding a (num_classes x num_features)
weight matrix followed by a per-class bias, so the whole package can treat
"a model" as a plain array of fixed dimension.  Training is one full-batch
gradient step per participation; there is no local epoch loop.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class ModelSpec:
    """Shape of the flattened parameter vector shared by every model in a run."""

    num_classes: int
    num_features: int

    @property
    def dim(self) -> int:
        return self.num_classes * (self.num_features + 1)


@dataclass(frozen=True)
class LearnerConfig:
    spec: ModelSpec
    learning_rate: float
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning rate must be nonnegative")
        if self.l2 < 0:
            raise ConfigurationError("l2 weight must be nonnegative")


def zeros(spec: ModelSpec) -> np.ndarray:
    return np.zeros(spec.dim)


def unpack(w: np.ndarray, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Split a flat vector into (weights, bias)."""
    if w.shape != (spec.dim,):
        raise ValidationError(f"model vector must have dimension {spec.dim}")
    k, f = spec.num_classes, spec.num_features
    return w[: k * f].reshape(k, f), w[k * f :]


def _probs(w: np.ndarray, features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    weights, bias = unpack(w, spec)
    logits = features @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def loss(w: np.ndarray, features: np.ndarray, labels: np.ndarray, spec: ModelSpec, l2: float = 0.0) -> float:
    """Mean cross-entropy over the given samples, plus an optional L2 term."""
    if len(labels) == 0:
        raise ValidationError("loss needs at least one sample")
    p = _probs(w, features, spec)
    ce = -np.mean(np.log(np.maximum(p[np.arange(len(labels)), labels], 1e-300)))
    return float(ce + 0.5 * l2 * (w @ w))


def gradient(w: np.ndarray, features: np.ndarray, labels: np.ndarray, spec: ModelSpec, l2: float = 0.0) -> np.ndarray:
    """Exact analytic gradient of :func:`loss`."""
    n = len(labels)
    if n == 0:
        raise ValidationError("gradient needs at least one sample")
    p = _probs(w, features, spec)
    p[np.arange(n), labels] -= 1.0
    grad_w = p.T @ features / n
    grad_b = p.mean(axis=0)
    return np.concatenate([grad_w.ravel(), grad_b]) + l2 * w


def local_update(w_global: np.ndarray, features: np.ndarray, labels: np.ndarray, cfg: LearnerConfig) -> np.ndarray:
    """One gradient step from the received global model on local data."""
    return w_global - cfg.learning_rate * gradient(w_global, features, labels, cfg.spec, cfg.l2)


def accuracy(w: np.ndarray, features: np.ndarray, labels: np.ndarray, spec: ModelSpec) -> float:
    """Fraction of correct argmax predictions; ties resolve to the lowest class."""
    if len(labels) == 0:
        raise ValidationError("accuracy needs a nonempty test set")
    p = _probs(w, features, spec)
    return float(np.mean(np.argmax(p, axis=1) == labels))


def smoothness_estimate(features: np.ndarray, l2: float = 0.0, iters: int = 200, seed: int = 0) -> float:
    """Estimated smoothness constant of the regularized cross-entropy loss.

    Uses the classic curvature bound 0.25 * lambda_max(X'X)/n with a bias
    column appended, where lambda_max comes from power iteration.
    """
    x = np.hstack([features, np.ones((features.shape[0], 1))])
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.normal(size=x.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = x.T @ (x @ v)
        lam = float(np.linalg.norm(u))
        if lam == 0.0:
            break
        v = u / lam
    return l2 + 0.25 * lam / n


def in_gamma_window(learning_rate: float, smoothness: float) -> bool:
    """Whether the step size sits in the (1/(2L), 1/L) window the theory needs."""
    return 0.5 / smoothness < learning_rate < 1.0 / smoothness


def model_to_bytes(w: np.ndarray) -> bytes:
    """Length-prefixed little-endian float64 encoding."""
    arr = np.ascontiguousarray(w, dtype="<f8")
    return struct.pack("<Q", arr.size) + arr.tobytes()


def model_from_bytes(blob: bytes) -> np.ndarray:
    (n,) = struct.unpack_from("<Q", blob, 0)
    expected = 8 + 8 * n
    if len(blob) != expected:
        raise ValidationError(f"model blob has {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f8", offset=8).astype(np.float64)


def model_to_json(w: np.ndarray) -> str:
    return json.dumps({"values": np.asarray(w, dtype=np.float64).tolist()})


def model_from_json(text: str) -> np.ndarray:
    return np.asarray(json.loads(text)["values"], dtype=np.float64)
