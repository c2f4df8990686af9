"""Linear embedding model: structured feature map g(x) = [x; net(x)],
latent dynamics g+ = A g(x) + B u, analytic decoder C = [I 0], the joint
training loss with gradients, and a desk-scale numerical check of the
Koopman-form identity on a scalar polynomial system."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nets import Adam, DimensionError, FeatureNetwork


@dataclass(frozen=True)
class LossWeights:
    lam1: float = 1.0
    lam2: float = 0.0

    def __post_init__(self):
        if self.lam1 < 0.0 or self.lam2 < 0.0:
            raise ValueError("loss weights must be non-negative")
        if self.lam1 == 0.0 and self.lam2 == 0.0:
            raise ValueError("loss weights cannot both be zero")


@dataclass(frozen=True)
class ParamMask:
    """Which parameter groups receive gradients; C is structural, never trained."""
    update_A: bool = True
    update_B: bool = True
    update_theta: bool = True

    def __post_init__(self):
        if not (self.update_A or self.update_B or self.update_theta):
            raise ValueError("at least one parameter group must be trainable")


def structural_decoder(n, big_n):
    return np.hstack([np.eye(n), np.zeros((n, big_n - n))])


class EmbeddingModel:
    """Feature network plus (A, B, C) with N = n + net.out_dim.

    The first n latent coordinates are the state itself, so the decoder
    C = [I 0] is exact by construction.
    """

    def __init__(self, net, A, B, n, p):
        self.net = net
        self.n = int(n)
        self.p = int(p)
        n_learned = net.out_dim if net is not None else 0
        if net is not None and net.in_dim != self.n:
            raise DimensionError("network input width must equal state dim")
        self.big_n = self.n + n_learned
        self.A = np.array(A, dtype=float)
        self.B = np.array(B, dtype=float)
        if self.A.shape != (self.big_n, self.big_n):
            raise DimensionError(f"A must be {self.big_n}x{self.big_n}")
        if self.B.shape != (self.big_n, self.p):
            raise DimensionError(f"B must be {self.big_n}x{self.p}")
        self.C = structural_decoder(self.n, self.big_n)

    @property
    def n_learned(self):
        return self.big_n - self.n

    def embed(self, x):
        """Lift a state (or batch of row states) into the latent space."""
        x = np.asarray(x, dtype=float)
        if self.net is None:
            return x.copy()
        feats = self.net.forward(x)
        return np.concatenate([x, feats], axis=-1)

    def decode(self, xi):
        return np.asarray(xi, dtype=float)[..., :self.n].copy()

    def predict_latent(self, xi, u):
        xi = np.asarray(xi, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if xi.shape[-1] != self.big_n or u.shape[-1] != self.p:
            raise DimensionError("latent/input dimension mismatch")
        return xi @ self.A.T + u @ self.B.T

    def predict_state(self, x, u):
        return self.decode(self.predict_latent(self.embed(x), u))

    def trainable_params(self, mask):
        """Live parameter references in the canonical order [A?, B?, theta?]."""
        out = []
        if mask.update_A:
            out.append(self.A)
        if mask.update_B:
            out.append(self.B)
        if mask.update_theta and self.net is not None:
            out.extend(self.net.parameters())
        return out

    def all_params(self):
        out = [self.A, self.B, self.C]
        if self.net is not None:
            out.extend(self.net.parameters())
        return out

    def copy(self):
        return EmbeddingModel(self.net.copy() if self.net else None,
                              self.A.copy(), self.B.copy(), self.n, self.p)

    def to_dict(self):
        return {
            "n": self.n, "p": self.p, "N": self.big_n,
            "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
            "network": self.net.to_dict() if self.net else None,
        }

    @classmethod
    def from_dict(cls, d):
        net = FeatureNetwork.from_dict(d["network"]) if d["network"] else None
        return cls(net, np.array(d["A"]), np.array(d["B"]), d["n"], d["p"])

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def loss_and_gradients(model, X, U, Y, weights, mask):
    """Summed batch loss

        lam1 * ||A g(x) + B u - g(y)||^2 + lam2 * ||C (A g(x) + B u) - y||^2

    and gradients for the unmasked parameter groups, ordered as
    ``model.trainable_params(mask)``. Gradients flow through both g(x) and
    g(y); C is fixed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if not (X.shape[0] == U.shape[0] == Y.shape[0]):
        raise DimensionError("batch size mismatch")

    gx = model.embed(X)
    gy = model.embed(Y)
    pred = gx @ model.A.T + U @ model.B.T
    e1 = pred - gy
    e2 = pred @ model.C.T - Y
    loss = weights.lam1 * float(np.sum(e1 * e1)) \
        + weights.lam2 * float(np.sum(e2 * e2))

    # dL/dpred, shared by the A and B gradients
    g_pred = 2.0 * weights.lam1 * e1 + 2.0 * weights.lam2 * (e2 @ model.C)

    grads = []
    if mask.update_A:
        grads.append(g_pred.T @ gx)
    if mask.update_B:
        grads.append(g_pred.T @ U)
    if mask.update_theta and model.net is not None:
        n = model.n
        up_x = (g_pred @ model.A)[:, n:]
        up_y = (-2.0 * weights.lam1 * e1)[:, n:]
        wx, bx, _ = model.net.backward(X, up_x)
        wy, by, _ = model.net.backward(Y, up_y)
        for gwx, gbx, gwy, gby in zip(wx, bx, wy, by):
            grads.extend((gwx + gwy, gbx + gby))
    return loss, grads


def verify_koopman_form(a, b, c, n_monomials, x_grid, u_grid,
                        quad_points=64, fd_step=1e-6):
    """Max residual of g(f(x,u)) - A g(x) - Bhat(x,u) u on a grid.

    Test system: x+ = a x + b x u + c u with monomial features g_i(x) = x^i,
    i = 1..N. The drift x+ = a x leaves span(x, ..., x^N) invariant, so the
    exact drift operator is A = diag(a^i). Bhat is evaluated by nested
    Gauss-Legendre quadrature with a central finite difference in u.
    """
    big_n = int(n_monomials)
    powers = np.arange(1, big_n + 1)
    A = np.diag(np.asarray(a, dtype=float) ** powers)

    def g(z):
        return float(z) ** powers

    def gprime(z):
        return powers * float(z) ** (powers - 1)

    def f(x, u):
        return a * x + b * x * u + c * u

    nodes, wts = np.polynomial.legendre.leggauss(quad_points)
    nodes = 0.5 * (nodes + 1.0)   # map to [0, 1]
    wts = 0.5 * wts

    def beta_many(x, us):
        # line integral of g' from f(x,0) to f(x,u), times the increment,
        # vectorized over a vector of u values; returns (len(us), N)
        deltas = f(x, us) - f(x, 0.0)
        z = a * x + nodes[:, None] * deltas[None, :]      # (quad, nu)
        gp = powers * z[..., None] ** (powers - 1)        # (quad, nu, N)
        integral = np.einsum("q,qun->un", wts, gp)
        return integral * deltas[:, None]

    def b_hat(x, u):
        plus = beta_many(x, nodes * u + fd_step)
        minus = beta_many(x, nodes * u - fd_step)
        du = (plus - minus) / (2.0 * fd_step)             # (quad, N)
        return wts @ du

    worst = 0.0
    for x in np.asarray(x_grid, dtype=float):
        gx = g(x)
        for u in np.asarray(u_grid, dtype=float):
            resid = g(f(x, u)) - A @ gx - b_hat(x, u) * u
            worst = max(worst, float(np.max(np.abs(resid))))
            if not np.isfinite(worst):
                raise ArithmeticError("quadrature produced non-finite residual")
    return worst


def make_optimizer(model, mask, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return Adam(model.trainable_params(mask), lr=lr, beta1=beta1,
                beta2=beta2, eps=eps)
