"""Minibatch SGD with momentum, L2 weight decay and a step learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .functional import NonFiniteError
from .network import Network

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    initial_lr: float = 0.005
    lr_drop_factor: float = 0.5
    lr_drop_period: int = 10
    l2_regularization: float = 0.004
    max_epochs: int = 50
    minibatch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.initial_lr < 0:
            raise ValueError("initial_lr must be >= 0")
        if not 0.0 < self.lr_drop_factor <= 1.0:
            raise ValueError("lr_drop_factor must lie in (0, 1]")
        if self.lr_drop_period < 1 or self.minibatch_size < 1 or self.max_epochs < 0:
            raise ValueError("lr_drop_period and minibatch_size must be >= 1, max_epochs >= 0")
        if self.l2_regularization < 0:
            raise ValueError("l2_regularization must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        unknown = set(doc) - set(asdict(base))
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return replace(base, **doc)


# Depth-branch and signal-image-branch hyperparameters.
TABLE_I = TrainConfig(momentum=0.9, initial_lr=0.005, lr_drop_factor=0.5, lr_drop_period=10,
                      l2_regularization=0.004, max_epochs=50, minibatch_size=128)
TABLE_II = TrainConfig(momentum=0.9, initial_lr=0.001, lr_drop_factor=0.5, lr_drop_period=10,
                       l2_regularization=0.004, max_epochs=100, minibatch_size=64)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.initial_lr * cfg.lr_drop_factor ** (epoch // cfg.lr_drop_period)


def sgd_momentum_step(params, grads, velocity, lr: float, cfg: TrainConfig) -> None:
    """In-place update of matching lists of parameter, gradient and velocity arrays.

    v <- momentum * v - lr * (g + l2 * w);  w <- w + v
    """
    if not len(params) == len(grads) == len(velocity):
        raise ValueError("params, grads and velocity must have equal length")
    for w, g, v in zip(params, grads, velocity):
        if w.shape != g.shape or w.shape != v.shape:
            raise ValueError(f"shape mismatch: param {w.shape}, grad {g.shape}, velocity {v.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    for w, g, v in zip(params, grads, velocity):
        step = g + cfg.l2_regularization * w if cfg.l2_regularization else g
        v *= cfg.momentum
        v -= lr * step
        w += v


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    accuracy: float


def train(net: Network, images, labels, cfg: TrainConfig, initialize: bool = True,
          log_every: int = 0) -> list[EpochStats]:
    """Train ``net`` in place; returns one :class:`EpochStats` per epoch.

    Parameters are re-initialized from ``cfg.seed`` unless ``initialize`` is
    false. Each epoch visits the samples in a seeded random order; the final
    partial minibatch is kept.
    """
    x = np.asarray(images, dtype=np.float32)
    y = np.asarray(labels, dtype=np.int64)
    n = len(y)
    if n == 0 or len(x) != n:
        raise ValueError("need a non-empty training set with one label per image")
    if y.min() < 0 or y.max() >= net.num_classes:
        raise ValueError(f"labels must lie in [0, {net.num_classes})")
    if initialize:
        net.initialize(cfg.seed)

    names = [name for name, _ in net.param_items()]
    params = [a for _, a in net.param_items()]
    velocity = [np.zeros_like(a) for a in params]
    shuffle = np.random.default_rng([int(cfg.seed), 1])
    history = []
    for epoch in range(cfg.max_epochs):
        lr = lr_schedule(epoch, cfg)
        order = shuffle.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            # overflow shows up as a non-finite loss or gradient, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    loss, logits, grads = net.loss_and_grads(x[idx], y[idx])
                except NonFiniteError:
                    raise TrainingDivergedError(
                        f"logits became non-finite in epoch {epoch}") from None
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}")
                total_loss += loss * len(idx)
                correct += int((logits.argmax(axis=1) == y[idx]).sum())
                flat = {f"layer{i}.{k}": g for i, gd in enumerate(grads) for k, g in gd.items()}
                sgd_momentum_step(params, [flat[k] for k in names], velocity, lr, cfg)
        stats = EpochStats(epoch, lr, total_loss / n, correct / n)
        history.append(stats)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d lr %.5g loss %.4f acc %.3f", epoch, lr, stats.loss, stats.accuracy)
    return history
