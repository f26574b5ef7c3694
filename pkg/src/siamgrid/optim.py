"""SGD with momentum and weight decay, plus the cosine decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, Parameter


@dataclass(frozen=True)
class CosineSchedule:
    base_lr: float
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ContractError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.min_lr > self.base_lr:
            raise ContractError("min_lr exceeds base_lr")


def cosine_lr(schedule: CosineSchedule, t: int | float) -> float:
    """min_lr + (base_lr - min_lr) * (1 + cos(pi * t / T)) / 2."""
    if not 0 <= t <= schedule.total_steps:
        raise ContractError(f"t={t} outside [0, {schedule.total_steps}]")
    span = schedule.base_lr - schedule.min_lr
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * t / schedule.total_steps))


class SgdState:
    """Per-parameter momentum buffers keyed by parameter name."""

    def __init__(self, params: dict[str, Parameter], momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[str, np.ndarray] = {
            name: np.zeros_like(p.data) for name, p in params.items() if p.requires_grad
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.buffers)

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, buf in self.buffers.items():
            if name in arrays:
                buf[...] = arrays[name]


def sgd_step(params: dict[str, Parameter], state: SgdState, lr_t: float):
    """g <- grad + wd*param; buf <- momentum*buf + g; param <- param - lr_t*buf.

    Parameters with requires_grad False are untouched; a trainable parameter
    without a gradient is a contract violation (named in the error).
    """
    wd = np.float32(state.weight_decay)
    mom = np.float32(state.momentum)
    lr = np.float32(lr_t)
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise ContractError(f"sgd_step: parameter {name!r} has no gradient")
        g = p.grad
        if wd != 0.0:
            g = g + wd * p.data
        buf = state.buffers.get(name)
        if buf is None:
            buf = state.buffers[name] = np.zeros_like(p.data)
        buf *= mom
        buf += g
        if lr != 0.0:
            p.data -= lr * buf
