"""Small numpy building blocks shared by the encoder and the classifier.

Parameters live in flat ``{name: ndarray}`` trees so the optimizer, the
gradient clipping, and the finite-difference tests can treat every model
uniformly. Everything is float64 and seeded.
"""

from __future__ import annotations

import numpy as np

ParamTree = dict[str, np.ndarray]


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def copy_tree(tree: ParamTree) -> ParamTree:
    return {k: v.copy() for k, v in tree.items()}


def zeros_like_tree(tree: ParamTree) -> ParamTree:
    return {k: np.zeros_like(v) for k, v in tree.items()}


def global_norm(tree: ParamTree) -> float:
    return float(np.sqrt(sum(float(np.sum(v * v)) for v in tree.values())))


def clip_global_norm(grads: ParamTree, max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most max_norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for v in grads.values():
            v *= scale
    return norm


def pack(tree: ParamTree, order: list[str] | None = None) -> np.ndarray:
    keys = order if order is not None else sorted(tree)
    return np.concatenate([tree[k].ravel() for k in keys])


def unpack(vector: np.ndarray, template: ParamTree, order: list[str] | None = None) -> ParamTree:
    keys = order if order is not None else sorted(template)
    out: ParamTree = {}
    offset = 0
    for k in keys:
        size = template[k].size
        out[k] = vector[offset : offset + size].reshape(template[k].shape).copy()
        offset += size
    return out


class Adam:
    """Adaptive-moment gradient descent over a parameter tree."""

    def __init__(self, tree: ParamTree, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zeros_like_tree(tree)
        self.v = zeros_like_tree(tree)

    def step(self, params: ParamTree, grads: ParamTree) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)
