"""RFF-MPC baseline: residual dynamics fit online with random Fourier
features and recursive least squares; control by iLQR on nominal-plus-residual
dynamics."""

from __future__ import annotations

import logging
import math

import numpy as np

from .mpc import ilqr_solve

log = logging.getLogger(__name__)


class RffModel:
    """Random Fourier feature regressor for the residual r(x, u).

    Features phi(z) = sqrt(2/D) cos(Omega z + b) with Omega ~ N(0, I/sigma^2)
    approximate a Gaussian kernel of bandwidth sigma. Frequencies and phases
    are fixed at construction; W and the shared RLS covariance P are updated
    online with forgetting factor ``forgetting``.
    """

    def __init__(self, n, p, n_features=256, sigma=1.0, forgetting=0.999,
                 p0=100.0, seed=0):
        if n_features < 1 or sigma <= 0.0 or not 0.0 < forgetting <= 1.0:
            raise ValueError("bad RFF hyperparameters")
        self.n = int(n)
        self.p = int(p)
        self.n_features = int(n_features)
        self.sigma = float(sigma)
        self.forgetting = float(forgetting)
        self.p0 = float(p0)
        rng = np.random.default_rng(seed)
        self.omega = rng.normal(0.0, 1.0 / self.sigma,
                                size=(self.n_features, self.n + self.p))
        self.phase = rng.uniform(0.0, 2.0 * math.pi, size=self.n_features)
        self.W = np.zeros((self.n, self.n_features))
        self.P = self.p0 * np.eye(self.n_features)

    def features(self, z):
        z = np.asarray(z, dtype=float)
        return math.sqrt(2.0 / self.n_features) \
            * np.cos(z @ self.omega.T + self.phase)

    def predict(self, x, u):
        z = np.concatenate([np.asarray(x, dtype=float),
                            np.atleast_1d(np.asarray(u, dtype=float))])
        return self.W @ self.features(z)

    def update(self, x, u, residual):
        """Rank-one RLS update toward residual = x_next - f_known(x, u)."""
        z = np.concatenate([np.asarray(x, dtype=float),
                            np.atleast_1d(np.asarray(u, dtype=float))])
        phi = self.features(z)
        p_phi = self.P @ phi
        denom = self.forgetting + phi @ p_phi
        gain = p_phi / denom
        err = np.asarray(residual, dtype=float) - self.W @ phi
        self.W += np.outer(err, gain)
        self.P = (self.P - np.outer(gain, p_phi)) / self.forgetting
        self.P = 0.5 * (self.P + self.P.T)
        if not np.all(np.isfinite(self.P)) or np.any(np.diag(self.P) <= 0.0):
            log.warning("RLS covariance lost positive-definiteness; reset")
            self.P = self.p0 * np.eye(self.n_features)


def median_heuristic_sigma(Z, max_pairs=2000, seed=0):
    """Bandwidth from the median pairwise distance of a data subsample."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    rng = np.random.default_rng(seed)
    m = Z.shape[0]
    i = rng.integers(0, m, size=max_pairs)
    j = rng.integers(0, m, size=max_pairs)
    keep = i != j
    d = np.linalg.norm(Z[i[keep]] - Z[j[keep]], axis=1)
    med = float(np.median(d))
    return med if med > 0.0 else 1.0


def augmented_step(model, nominal_step):
    """Nominal dynamics plus the learned residual, for the iLQR solver."""
    def f(x, u):
        return nominal_step(x, u) + model.W @ model.features(
            np.concatenate([x, np.atleast_1d(u)]))
    return f


def rff_mpc_step(x, model, nominal_step, cost, warm_start=None,
                 ilqr_kwargs=None):
    """First input of the iLQR solve on f_known + learned residual.

    The residual is re-evaluated at every linearization point inside the
    solver, not frozen per solve.
    """
    sol = ilqr_solve(augmented_step(model, nominal_step), x, cost,
                     warm_start=warm_start, **(ilqr_kwargs or {}))
    return sol.inputs[0], sol
