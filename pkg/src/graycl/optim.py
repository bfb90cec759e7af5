"""Parameter updates and learning-rate schedule.

LARS scales each layer's step by trust * ||w|| / ||g||; bias and batch-norm
parameters (1-D tensors) are excluded from both weight decay and trust
scaling, so they follow plain momentum SGD. The schedule is a linear warmup
into a cosine decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class OptimError(ValueError):
    pass


@dataclass
class LarsConfig:
    base_lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3

    def validate(self):
        if self.trust_coefficient <= 0:
            raise OptimError("trust_coefficient must be positive")
        if min(self.base_lr, self.momentum, self.weight_decay) < 0:
            raise OptimError("optimizer hyperparameters must be non-negative")


@dataclass
class ScheduleConfig:
    warmup_steps: int
    total_steps: int
    base_lr: float
    final_lr: float = 0.0

    def validate(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise OptimError("need 0 <= warmup_steps < total_steps")


def lr_at(step, config):
    """Learning rate at ``step``: linear warmup then cosine decay."""
    config.validate()
    if step < 0 or step > config.total_steps:
        raise OptimError(f"step {step} outside [0, {config.total_steps}]")
    if step < config.warmup_steps:
        return config.base_lr * (step + 1) / config.warmup_steps
    span = config.total_steps - config.warmup_steps
    t = (step - config.warmup_steps) / span
    return config.final_lr + (config.base_lr - config.final_lr) * 0.5 * (
        1.0 + math.cos(math.pi * t)
    )


def _check_finite(name, grad):
    if not np.all(np.isfinite(grad)):
        raise OptimError(f"non-finite gradient for parameter {name!r}; step refused")


class Lars:
    """Layer-wise adaptive rate scaling with momentum and weight decay."""

    def __init__(self, params, config):
        config.validate()
        self.params = dict(params)  # name -> Tensor
        self.config = config
        self.state = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    @staticmethod
    def excluded(name, p):
        # biases and batch-norm affine parameters: no decay, no trust scaling
        return p.data.ndim <= 1

    def step(self, lr):
        cfg = self.config
        for name, p in self.params.items():
            if p.grad is None:
                continue
            _check_finite(name, p.grad)
            g = p.grad
            if self.excluded(name, p):
                r = 1.0
            else:
                g = g + cfg.weight_decay * p.data
                w_norm = np.linalg.norm(p.data)
                g_norm = np.linalg.norm(g)
                if w_norm == 0.0 or g_norm == 0.0:
                    r = 1.0
                else:
                    # plain float: a numpy scalar would upcast float32 params
                    r = float(cfg.trust_coefficient * w_norm / g_norm)
            v = self.state[name]
            v = cfg.momentum * v + lr * r * g
            self.state[name] = v
            p.data = p.data - v

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


class Sgd:
    """Momentum SGD: v <- momentum*v + g; w <- w - lr*v."""

    def __init__(self, params, momentum=0.9):
        self.params = dict(params)
        self.momentum = momentum
        self.state = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            _check_finite(name, p.grad)
            v = self.momentum * self.state[name] + p.grad
            self.state[name] = v
            p.data = p.data - lr * v

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
