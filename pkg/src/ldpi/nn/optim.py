"""Optimizers and learning-rate schedules.

Both optimizers update parameter arrays in place and are deterministic:
two identical calls from identical state produce identical parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigInvalid, EpochOutOfRange


@dataclass
class SgdState:
    velocity: dict = field(default_factory=dict)


def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.9,
             state: SgdState | None = None) -> SgdState:
    """Momentum SGD: v = mu*v + g; p -= lr*v."""
    if state is None:
        state = SgdState()
    for name, g in grads.items():
        p = params[name]
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocity[name] = v
        v *= momentum
        v += g
        p -= np.asarray(lr, dtype=p.dtype) * v
    return state


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """Adam with bias correction."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = v
        else:
            v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        mhat = m / np.asarray(c1, dtype=p.dtype)
        vhat = v / np.asarray(c2, dtype=p.dtype)
        p -= np.asarray(lr, dtype=p.dtype) * mhat / (np.sqrt(vhat) + np.asarray(eps, dtype=p.dtype))
    return state


@dataclass(frozen=True)
class WarmupCosine:
    """Linear warmup to eta0, then cosine annealing to eta_min."""

    eta0: float
    eta_min: float
    warmup_epochs: int
    total_epochs: int

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ConfigInvalid(
                f"need 0 < warmup ({self.warmup_epochs}) < total ({self.total_epochs})")


@dataclass(frozen=True)
class TwoPhase:
    """High-rate search phase, then a reduced fine-tuning rate."""

    lr_search: float
    lr_finetune: float
    switch_epoch: int

    def __post_init__(self):
        if not self.lr_finetune < self.lr_search:
            raise ConfigInvalid(
                f"lr_finetune ({self.lr_finetune}) must be < lr_search ({self.lr_search})")


def lr_at(schedule, epoch: int) -> float:
    """Learning rate for a 0-based epoch index."""
    if epoch < 0:
        raise EpochOutOfRange(f"epoch {epoch} < 0")
    if isinstance(schedule, WarmupCosine):
        if epoch >= schedule.total_epochs:
            raise EpochOutOfRange(f"epoch {epoch} >= {schedule.total_epochs}")
        w = schedule.warmup_epochs
        if epoch < w:
            return schedule.eta0 * (epoch + 1) / w
        span = schedule.total_epochs - w
        frac = (epoch - w) / span
        return schedule.eta_min + 0.5 * (schedule.eta0 - schedule.eta_min) * (1 + math.cos(math.pi * frac))
    if isinstance(schedule, TwoPhase):
        return schedule.lr_search if epoch < schedule.switch_epoch else schedule.lr_finetune
    raise ConfigInvalid(f"unknown schedule {schedule!r}")
