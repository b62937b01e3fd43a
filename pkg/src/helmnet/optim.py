"""Softmax cross-entropy and heavy-ball SGD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LossOutput:
    loss: float
    logit_grad: np.ndarray
    probs: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> LossOutput:
    """Batch-mean cross-entropy; the gradient already carries the 1/N factor."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k - 1}]")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z[np.arange(n), labels] - log_norm
    loss = float(-log_p.mean())
    probs = np.exp(z - log_norm[:, None])
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return LossOutput(loss, grad.astype(logits.dtype), probs)


@dataclass
class SGDMomentum:
    """v <- momentum * v + g ; w <- w - lr * v (no dampening, no Nesterov)."""

    learning_rate: float = 0.02
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    def step(self, named_params):
        """Update every (name, param, grad) triple in place, then zero grads."""
        for name, param, grad in named_params:
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(param)
            v *= self.momentum
            v += grad
            param -= self.learning_rate * v
            grad.fill(0)
