"""Numerical substrate: dense matrices, a small MLP with hand-rolled
reverse-mode gradients, an Adam optimizer, and ridge least squares.

Matrices are plain float64 numpy arrays (row-major). The network is a
fixed-topology feed-forward net with tanh hidden layers and a linear output
layer; gradients are computed by explicit backpropagation so the package has
no autodiff dependency.
"""

from __future__ import annotations

import json
import math

import numpy as np


class DimensionError(ValueError):
    """Shapes of interacting operands do not line up."""


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise DimensionError(f"{what}: expected length {dim}, got {x.shape[0]}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise DimensionError(f"{what}: expected width {dim}, got {x.shape[1]}")
        return x, False
    raise DimensionError(f"{what}: expected 1-d or 2-d array, got ndim={x.ndim}")


class FeatureNetwork:
    """Feed-forward network with tanh hidden layers and a linear output.

    ``weights[i]`` has shape (width[i+1], width[i]); ``biases[i]`` has shape
    (width[i+1],). All parameters are float64.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise DimensionError("weights and biases must pair up")
        if not weights:
            raise DimensionError("network needs at least one layer")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: inconsistent weight/bias shapes")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i}: input width mismatch")
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite network parameters")

    @classmethod
    def create(cls, widths, seed):
        """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
        if len(widths) < 2:
            raise DimensionError("need at least input and output widths")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def forward(self, x):
        """Evaluate the network; accepts a vector or a batch of row vectors."""
        xb, single = _as_batch(x, self.in_dim, "forward input")
        a = xb
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w.T + b)
        a = a @ self.weights[-1].T + self.biases[-1]
        return a[0] if single else a

    def _forward_cached(self, xb):
        # Returns activations per layer (pre-output) for backprop.
        acts = [xb]
        a = xb
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w.T + b)
            acts.append(a)
        out = a @ self.weights[-1].T + self.biases[-1]
        return out, acts

    def backward(self, x, upstream):
        """Gradients of sum(upstream * forward(x)) w.r.t. parameters and x.

        ``upstream`` must match the forward output shape. Returns
        (weight_grads, bias_grads, x_grad); batch gradients are summed over
        the batch, x_grad keeps the batch dimension.
        """
        xb, single = _as_batch(x, self.in_dim, "backward input")
        ub, usingle = _as_batch(upstream, self.out_dim, "upstream")
        if single != usingle or xb.shape[0] != ub.shape[0]:
            raise DimensionError("input/upstream batch sizes differ")
        _, acts = self._forward_cached(xb)

        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        delta = ub
        for i in range(len(self.weights) - 1, -1, -1):
            w_grads[i] = delta.T @ acts[i]
            b_grads[i] = delta.sum(axis=0)
            if i > 0:
                # tanh' = 1 - tanh^2 on the stored activation
                delta = (delta @ self.weights[i]) * (1.0 - acts[i] ** 2)
        x_grad = delta @ self.weights[0]
        if single:
            x_grad = x_grad[0]
        return w_grads, b_grads, x_grad

    def parameters(self):
        """Flat parameter list [W0, b0, W1, b1, ...] (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return FeatureNetwork([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases])

    def to_dict(self):
        return {
            "widths": self.widths,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": "tanh",
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["biases"])


class Adam:
    """Adaptive-moment first-order optimizer over a fixed list of tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """One update, in place on ``params``; returns them for convenience."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise DimensionError("parameter/gradient list length mismatch")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise DimensionError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def solve_least_squares(phi, y, ridge=0.0):
    """Minimize ||phi @ W - y||_F (+ ridge * ||W||_F).

    Solves the normal equations; with ridge 0 a rank-deficient design raises.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != y.shape[0]:
        raise DimensionError("design/target row counts differ")
    q = phi.shape[1]
    gram = phi.T @ phi + ridge * np.eye(q)
    rhs = phi.T @ y
    if ridge <= 0.0:
        if np.linalg.matrix_rank(phi) < q:
            raise np.linalg.LinAlgError("rank-deficient design with ridge 0")
    return np.linalg.solve(gram, rhs)


def save_matrix_json(path, mat):
    with open(path, "w") as f:
        json.dump({"rows": mat.shape[0], "cols": mat.shape[1],
                   "entries": mat.tolist()}, f)


def load_matrix_json(path):
    with open(path) as f:
        d = json.load(f)
    m = np.array(d["entries"], dtype=float)
    if m.shape != (d["rows"], d["cols"]):
        raise DimensionError("matrix header disagrees with entries")
    return m
