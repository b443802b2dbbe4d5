"""SGD with classic momentum and a linear-warmup, half-period cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BoundsError, ConfigurationError, DomainError


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 0.32
    warmup_epochs: int = 5
    total_epochs: int = 50
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ConfigurationError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigurationError(
                f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}"
            )
        if self.steps_per_epoch < 1:
            raise ConfigurationError("steps_per_epoch must be >= 1")

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch


def lr_at(config: ScheduleConfig, step: int) -> float:
    """Learning rate for ``step``: ``base * (step + 1) / W`` during warmup, then cosine to 0."""
    total, warm = config.total_steps, config.warmup_steps
    if not 0 <= step < total:
        raise DomainError(f"step {step} outside [0, {total})")
    if step < warm:
        return config.base_lr * (step + 1) / warm
    progress = (step - warm) / (total - warm)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def schedule(config: ScheduleConfig) -> np.ndarray:
    return np.array([lr_at(config, s) for s in range(config.total_steps)])


def sgd_step(params, grads, velocity, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
    """In-place classic momentum update on lists of arrays.

    ``v <- momentum * v + (g + weight_decay * p)``; ``p <- p - lr * v``.
    Returns ``(params, velocity)``.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise BoundsError("params, grads and velocity must have the same length")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise BoundsError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        if weight_decay:
            g = g + weight_decay * p
        v *= momentum
        v += g
        p -= lr * v
    return params, velocity


class SGD:
    """Momentum SGD over :class:`~cvrl.encoder.layers.Parameter` objects.

    Parameters with ``requires_grad`` off are skipped entirely.
    """

    def __init__(self, parameters, momentum: float = 0.9, weight_decay: float = 0.0):
        self.parameters = list(parameters)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.value) for p in self.parameters]

    def step(self, lr: float) -> None:
        active = [i for i, p in enumerate(self.parameters) if p.requires_grad]
        sgd_step(
            [self.parameters[i].value for i in active],
            [self.parameters[i].grad for i in active],
            [self.velocity[i] for i in active],
            lr,
            self.momentum,
            self.weight_decay,
        )

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()
