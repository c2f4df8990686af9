"""Online phase: act with the target model, store real transitions in a
replay buffer, take masked gradient steps on the main model, and soft-update
the target toward the main parameters."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .embedding import (LossWeights, ParamMask, loss_and_gradients,
                        make_optimizer)
from .mpc import koopman_mpc_step
from .nets import DimensionError
from .offline import Transition


class ReplayBuffer:
    """Bounded FIFO of transitions with seeded uniform batch sampling."""

    def __init__(self, capacity, seed=0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._items = deque(maxlen=self.capacity)
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._items)

    def add(self, transition):
        self._items.append(transition)

    def sample(self, size):
        """min(size, len) transitions, uniform without replacement."""
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        k = min(int(size), len(self._items))
        idx = self.rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


def batch_sample(buffer, size):
    return buffer.sample(size)


@dataclass
class TargetPair:
    """Main model (trained) and target model (acting); start identical."""
    main: "EmbeddingModel"
    target: "EmbeddingModel"

    @classmethod
    def from_prior(cls, prior):
        return cls(prior.copy(), prior.copy())


@dataclass
class AdaptationConfig:
    tau: float = 0.05
    batch_size: int = 64
    gradient_steps: int = 1
    buffer_capacity: int = 10000
    learning_rate: float = 1e-3
    mask: ParamMask = field(default_factory=lambda: ParamMask(
        update_A=False, update_B=True, update_theta=True))
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch size and capacity must be positive")
        if self.gradient_steps < 0:
            raise ValueError("gradient_steps must be non-negative")


def soft_update(pair, tau):
    """target <- tau * main + (1 - tau) * target, every parameter tensor."""
    mains = pair.main.all_params()
    targets = pair.target.all_params()
    if len(mains) != len(targets):
        raise DimensionError("main/target parameter lists differ")
    for m, t in zip(mains, targets):
        if m.shape != t.shape:
            raise DimensionError("main/target tensor shape mismatch")
        t *= (1.0 - tau)
        t += tau * m
    return pair.target


def _transitions_to_arrays(batch):
    return (np.array([t.x for t in batch]),
            np.array([t.u for t in batch]),
            np.array([t.y for t in batch]))


def learn_from_buffer(pair, buffer, optimizer, cfg):
    """cfg.gradient_steps masked Adam steps on the main model; returns the
    loss of the first sampled batch (nan when no step is taken)."""
    loss = float("nan")
    params = pair.main.trainable_params(cfg.mask)
    for i in range(cfg.gradient_steps):
        batch = buffer.sample(cfg.batch_size)
        bx, bu, by = _transitions_to_arrays(batch)
        step_loss, grads = loss_and_gradients(pair.main, bx, bu, by,
                                              cfg.weights, cfg.mask)
        if not np.isfinite(step_loss):
            raise ArithmeticError("non-finite online loss")
        optimizer.step(params, grads)
        if i == 0:
            loss = step_loss
    return loss


def adapt_step(pair, buffer, optimizer, x, true_step, cost, cfg):
    """One pass of the adaptive loop.

    In order: act with the target model, advance the true plant, store the
    transition, take masked gradient steps on the main model, soft-update the
    target. Returns (u, x_next, loss, diagnostics).
    """
    u = koopman_mpc_step(x, pair.target, cost)
    x_next = true_step(x, u)
    buffer.add(Transition(np.asarray(x, dtype=float).copy(),
                          np.atleast_1d(np.asarray(u, dtype=float)).copy(),
                          np.asarray(x_next, dtype=float).copy()))
    loss = learn_from_buffer(pair, buffer, optimizer, cfg)
    soft_update(pair, cfg.tau)
    diag = {"a_drift": float(np.linalg.norm(pair.target.A - pair.main.A)),
            "buffer_size": len(buffer)}
    return u, x_next, loss, diag


def make_adaptation_optimizer(pair, cfg):
    """Fresh optimizer state for the online phase (moments reset)."""
    return make_optimizer(pair.main, cfg.mask, lr=cfg.learning_rate)
