"""Small ReLU MLPs with hand-written backward passes.

Training uses the vectorized numpy path. Coding uses :func:`mlp_rows_exact`,
a jitted loop with a fixed summation order so encoder and decoder produce
bit-identical outputs regardless of BLAS blocking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass
class MlpWeights:
    weights: list[np.ndarray]  # (fan_in, fan_out)
    biases: list[np.ndarray]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("an MLP needs at least one layer and one bias per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input width does not chain")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @classmethod
    def init(cls, dims, rng: np.random.Generator, zero_last: bool = True) -> "MlpWeights":
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            scale = 0.0 if (last and zero_last) else np.sqrt(2.0 / a)
            weights.append(rng.normal(size=(a, b)) * scale)
            biases.append(np.zeros(b))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, dims) -> "MlpWeights":
        return cls([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])], [np.zeros(b) for b in dims[1:]])

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpWeights":
        return MlpWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def as_float32(self) -> "MlpWeights":
        r = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
        return MlpWeights([r(w) for w in self.weights], [r(b) for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def forward(self, x: np.ndarray, cache: bool = False):
        h = np.asarray(x, dtype=np.float64)
        acts = [h]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < n - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if cache else h

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Returns (grad wrt input, [dW0, db0, dW1, db1, ...])."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return g, grads


@numba.njit(cache=True)
def _dense_row(x, w, b, out, relu):
    n_in, n_out = w.shape
    for j in range(n_out):
        acc = b[j]
        for i in range(n_in):
            acc += x[i] * w[i, j]
        if relu and acc < 0.0:
            acc = 0.0
        out[j] = acc


@numba.njit(cache=True)
def mlp3_row(x, w0, b0, w1, b1, w2, b2, h0, h1, out):
    _dense_row(x, w0, b0, h0, True)
    _dense_row(h0, w1, b1, h1, True)
    _dense_row(h1, w2, b2, out, False)


@numba.njit(cache=True)
def _mlp3_rows(x, w0, b0, w1, b1, w2, b2, out):
    h0 = np.empty(w0.shape[1])
    h1 = np.empty(w1.shape[1])
    for r in range(x.shape[0]):
        mlp3_row(x[r], w0, b0, w1, b1, w2, b2, h0, h1, out[r])


def mlp_rows_exact(mlp: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass for a 3-layer MLP, one row at a time."""
    if len(mlp.weights) != 3:
        raise ValueError("exact evaluation is implemented for 3-layer MLPs")
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((x.shape[0], mlp.dims[-1]))
    w = [np.ascontiguousarray(a) for a in mlp.params()]
    _mlp3_rows(x, *w, out)
    return out
