"""Tiny tanh MLP embedding network with a unit-norm class-center head.

Forward and backward passes are written out by hand; ``ModelState`` is a
plain container so it can be saved with ``np.savez``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import EPS


@dataclass
class ModelState:
    weights: list  # per layer (fan_in, fan_out)
    biases: list
    centers: np.ndarray  # (C, d), unit rows
    velocity: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    def copy(self) -> "ModelState":
        return ModelState([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                          self.centers.copy(), {k: v.copy() for k, v in self.velocity.items()})

    def to_arrays(self) -> dict:
        out = {"centers": self.centers, "n_layers": np.array(len(self.weights))}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "ModelState":
        n = int(arrays["n_layers"])
        return cls([np.array(arrays[f"w{i}"]) for i in range(n)],
                   [np.array(arrays[f"b{i}"]) for i in range(n)],
                   np.array(arrays["centers"]))


def init_model(d_in: int, hidden, embed_dim: int, num_classes: int, rng) -> ModelState:
    sizes = [d_in, *hidden, embed_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    centers = rng.standard_normal((num_classes, embed_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return ModelState(weights, biases, centers)


def imprint_centers(state: ModelState, x, labels) -> None:
    """Set each center to the normalised mean initial embedding of its labelled samples.

    Classes with no samples keep their random center.
    """
    e = embed(state, x)
    labels = np.asarray(labels)
    for c in range(state.num_classes):
        members = labels == c
        if members.any():
            v = e[members].mean(axis=0)
            n = np.linalg.norm(v)
            if n > 0:
                state.centers[c] = v / n


def forward(state: ModelState, x):
    """Returns (cosines (B, C), cache for ``backward``)."""
    acts = [np.asarray(x, dtype=np.float64)]
    h = acts[0]
    last = len(state.weights) - 1
    for i, (w, b) in enumerate(zip(state.weights, state.biases)):
        a = h @ w + b
        h = a if i == last else np.tanh(a)
        acts.append(h)
    norm = np.linalg.norm(h, axis=1, keepdims=True)
    emb = h / norm
    raw = emb @ state.centers.T
    cos = np.clip(raw, -1.0 + EPS, 1.0 - EPS)
    return cos, (acts, norm, emb, raw == cos)


def embed(state: ModelState, x) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64)
    last = len(state.weights) - 1
    for i, (w, b) in enumerate(zip(state.weights, state.biases)):
        h = h @ w + b
        if i != last:
            h = np.tanh(h)
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def backward(state: ModelState, cache, g_cos):
    """Gradients of a scalar loss given d loss / d cos. Returns a dict of arrays."""
    acts, norm, emb, inside = cache
    g_cos = np.where(inside, g_cos, 0.0)
    grads = {"centers": g_cos.T @ emb}
    g_emb = g_cos @ state.centers
    g = (g_emb - emb * np.sum(g_emb * emb, axis=1, keepdims=True)) / norm
    for i in range(len(state.weights) - 1, -1, -1):
        if i != len(state.weights) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[f"w{i}"] = acts[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        if i:
            g = g @ state.weights[i].T
    return grads


def sgd_step(state: ModelState, grads: dict, lr: float, momentum: float, weight_decay: float) -> None:
    """Momentum SGD in place; weight decay on the network only, centers renormalised."""
    for name, g in grads.items():
        if name == "centers":
            param = state.centers
        else:
            param = (state.weights if name[0] == "w" else state.biases)[int(name[1:])]
            if weight_decay:
                g = g + weight_decay * param
        buf = state.velocity.get(name)
        buf = g.copy() if buf is None else momentum * buf + g
        state.velocity[name] = buf
        param -= lr * buf
    if lr:
        state.centers /= np.linalg.norm(state.centers, axis=1, keepdims=True)
