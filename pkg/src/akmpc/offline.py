"""Offline phase: roll out the nominal plant under nominal MPC to build the
training set, then jointly fit the feature network and the operator [A B]."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import cartpole
from .embedding import (EmbeddingModel, LossWeights, ParamMask,
                        loss_and_gradients, make_optimizer)
from .mpc import SolverError, ilqr_solve, shift_warm_start
from .nets import FeatureNetwork, solve_least_squares

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray


@dataclass
class Dataset:
    """Transition triplets as stacked arrays plus provenance metadata."""
    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    traj_id: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    def transitions(self):
        return [Transition(x, u, y) for x, u, y in zip(self.X, self.U, self.Y)]

    def save(self, csv_path, meta_path=None):
        n, p = self.X.shape[1], self.U.shape[1]
        header = ["traj"] + [f"x{i+1}" for i in range(n)] \
            + ([f"u{j+1}" for j in range(p)] if p > 1 else ["u"]) \
            + [f"y{i+1}" for i in range(n)]
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for t, x, u, y in zip(self.traj_id, self.X, self.U, self.Y):
                w.writerow([int(t)] + [f"{v:.17g}" for v in (*x, *u, *y)])
        if meta_path is not None:
            with open(meta_path, "w") as f:
                json.dump(self.metadata, f, indent=2)

    @classmethod
    def load(cls, csv_path, meta_path=None, n=4, p=1):
        rows = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        if meta_path is not None:
            with open(meta_path) as f:
                meta = json.load(f)
        return cls(rows[:, 1:1 + n], rows[:, 1 + n:1 + n + p],
                   rows[:, 1 + n + p:], rows[:, 0].astype(int), meta)


@dataclass
class OfflineTrainConfig:
    n_traj: int = 500
    traj_len: int = 60
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    lam1: float = 1.0
    lam2: float = 0.0
    n_learned: int = 2
    hidden: tuple = (64, 64, 64)
    seed: int = 0
    # std of force noise added to the MPC input during data generation;
    # closed-loop data without excitation leaves [A B] unidentifiable
    exploration_noise: float = 1.0
    edmd_ridge: float = 1e-8
    val_fraction: float = 0.1
    early_stop_loss: float = 1e-14   # mean per-sample loss; skips no-op epochs

    def __post_init__(self):
        for name in ("n_traj", "traj_len", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def default_init_sampler(rng):
    """Uniform over [-1,1] x [-0.5,0.5] x [-0.4,0.4] x [-0.5,0.5]."""
    lo = np.array([-1.0, -0.5, -0.4, -0.5])
    hi = -lo
    return rng.uniform(lo, hi)


def generate_dataset(params, cost, dt, n_traj, traj_len, seed,
                     init_sampler=default_init_sampler, exploration_noise=1.0,
                     ilqr_kwargs=None):
    """Closed-loop nominal-MPC rollouts on the nominal plant.

    The stored input is the applied one: MPC solution plus Gaussian
    excitation of std ``exploration_noise`` (pure closed-loop data makes the
    operator fit degenerate along the policy manifold). Each trajectory gets
    its own RNG stream derived from the master seed, so the dataset is
    reproducible and trajectories are order-independent. Trajectories where
    the solver diverges are skipped and logged.
    """
    ilqr_kwargs = dict(ilqr_kwargs or {})
    streams = np.random.SeedSequence(seed).spawn(n_traj)

    def f(x, u):
        return cartpole.step(x, u, dt, params)

    xs, us, ys, tids = [], [], [], []
    skipped = 0
    for tid, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        x = init_sampler(rng)
        warm = None
        try:
            for _ in range(traj_len):
                sol = ilqr_solve(f, x, cost, warm_start=warm, **ilqr_kwargs)
                u = sol.inputs[0]
                if exploration_noise > 0.0:
                    u = u + rng.normal(0.0, exploration_noise, size=u.shape)
                y = f(x, u)
                xs.append(x)
                us.append(u)
                ys.append(y)
                tids.append(tid)
                warm = shift_warm_start(sol.inputs)
                x = y
        except (SolverError, cartpole.IntegrationError) as exc:
            skipped += 1
            log.warning("trajectory %d skipped: %s", tid, exc)
            # drop the partial trajectory
            while tids and tids[-1] == tid:
                xs.pop(), us.pop(), ys.pop(), tids.pop()
    meta = {"seed": seed, "n_traj": n_traj, "traj_len": traj_len,
            "skipped": skipped, "dt": dt, "params": params.to_dict(),
            "exploration_noise": exploration_noise}
    return Dataset(np.array(xs), np.array(us), np.array(ys),
                   np.array(tids, dtype=int), meta)


def edmd_fit(model, X, U, Y, ridge=1e-8):
    """Least-squares [A B] on the current features (EDMD-style init)."""
    gx = np.atleast_2d(model.embed(X))
    gy = np.atleast_2d(model.embed(Y))
    phi = np.hstack([gx, np.atleast_2d(U)])
    ab = solve_least_squares(phi, gy, ridge=ridge).T
    model.A[:] = ab[:, :model.big_n]
    model.B[:] = ab[:, model.big_n:]
    return model


def split_by_trajectory(data, val_fraction, rng):
    """Train/validation index split on whole trajectories."""
    tids = np.unique(data.traj_id)
    perm = rng.permutation(tids)
    n_val = max(1, int(round(val_fraction * len(tids)))) if val_fraction > 0 else 0
    val_ids = set(perm[:n_val].tolist())
    val_mask = np.isin(data.traj_id, list(val_ids)) if n_val else \
        np.zeros(len(data), dtype=bool)
    return np.where(~val_mask)[0], np.where(val_mask)[0]


def one_step_error(model, X, U, Y):
    """Mean Euclidean one-step state prediction error."""
    pred = model.predict_state(np.atleast_2d(X), np.atleast_2d(U))
    return float(np.mean(np.linalg.norm(pred - np.atleast_2d(Y), axis=1)))


def train_offline(data, cfg):
    """Fit the prior embedding model on nominal-plant data.

    Random feature init (seeded), least-squares [A B] on the initial
    features, then mini-batch Adam on the joint loss. Returns the model and a
    history dict with per-epoch mean losses and validation errors.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    n = data.X.shape[1]
    p = data.U.shape[1]
    rng = np.random.default_rng(cfg.seed)

    if cfg.n_learned > 0:
        net = FeatureNetwork.create([n, *cfg.hidden, cfg.n_learned], cfg.seed)
        mask = ParamMask(True, True, True)
    else:
        net = None
        mask = ParamMask(True, True, False)
    big_n = n + cfg.n_learned
    model = EmbeddingModel(net, np.zeros((big_n, big_n)),
                           np.zeros((big_n, p)), n, p)

    train_idx, val_idx = split_by_trajectory(data, cfg.val_fraction, rng)
    edmd_fit(model, data.X[train_idx], data.U[train_idx], data.Y[train_idx],
             ridge=cfg.edmd_ridge)

    weights = LossWeights(cfg.lam1, cfg.lam2)
    opt = make_optimizer(model, mask, lr=cfg.learning_rate)
    params = model.trainable_params(mask)

    history = {"epoch_loss": [], "val_error": []}
    m = len(train_idx)
    bs = min(cfg.batch_size, m)
    for _ in range(cfg.epochs):
        # stop before stepping: Adam's normalized update would walk an
        # already-exact fit away from the optimum
        pre_loss, _ = loss_and_gradients(
            model, data.X[train_idx], data.U[train_idx], data.Y[train_idx],
            weights, mask)
        if pre_loss / m < cfg.early_stop_loss:
            break
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, m, bs):
            sel = order[start:start + bs]
            loss, grads = loss_and_gradients(
                model, data.X[sel], data.U[sel], data.Y[sel], weights, mask)
            if not np.isfinite(loss):
                raise ArithmeticError("non-finite training loss")
            opt.step(params, grads)
            total += loss
        history["epoch_loss"].append(total / m)
        if len(val_idx):
            history["val_error"].append(
                one_step_error(model, data.X[val_idx], data.U[val_idx],
                               data.Y[val_idx]))
    return model, history
