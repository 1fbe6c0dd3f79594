"""ADAM and the plateau / early-stopping schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """In-place bias-corrected ADAM update; returns ``(params, state)``.

    A step whose gradients contain NaN/inf is skipped (``state.skipped`` is
    incremented, moments untouched).
    """
    if grads.keys() != params.keys():
        raise ValueError("gradient names do not match parameter names")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {params[k].shape}")
    if not all(np.isfinite(g).all() for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient; ADAM step %d skipped", state.t + 1)
        return params, state
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainSchedule:
    lr: float = 1e-3
    factor: float = 10.0
    plateau_patience: int = 10
    stop_patience: int = 22
    batch_size: int = 16
    max_epochs: int = 100

    def __post_init__(self):
        if self.factor <= 1 or self.plateau_patience < 1 or self.stop_patience < 1:
            raise ValueError("factor must exceed 1 and patience values must be positive")


class PlateauSchedule:
    """Learning-rate/termination automaton driven by validation losses.

    An epoch improves when its loss is strictly below the best seen so far;
    that resets both counters. After ``plateau_patience`` non-improving epochs
    the rate is divided by ``factor`` and the plateau counter restarts. After
    ``stop_patience`` non-improving epochs training stops.
    """

    def __init__(self, schedule: TrainSchedule):
        self.schedule = schedule
        self.lr = schedule.lr
        self.best = math.inf
        self.best_epoch = None
        self.plateau_wait = 0
        self.stop_wait = 0
        self.epoch = 0
        self.stopped = False
        self.drops: list[int] = []

    def observe(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True when the epoch is a new best."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.plateau_wait = 0
            self.stop_wait = 0
            return True
        self.plateau_wait += 1
        self.stop_wait += 1
        if self.plateau_wait >= self.schedule.plateau_patience:
            self.lr /= self.schedule.factor
            self.plateau_wait = 0
            self.drops.append(self.epoch)
        if self.stop_wait >= self.schedule.stop_patience:
            self.stopped = True
        return False


def replay_schedule(val_losses, schedule: TrainSchedule | None = None):
    """Feed a loss sequence through the automaton until it stops.

    Returns ``(lrs, drop_epochs, stop_epoch)`` where ``lrs[i]`` is the rate in
    force after epoch ``i + 1`` and ``stop_epoch`` is None when the sequence
    ran out first.
    """
    sched = PlateauSchedule(schedule or TrainSchedule())
    lrs = []
    for loss in val_losses:
        sched.observe(loss)
        lrs.append(sched.lr)
        if sched.stopped:
            return lrs, sched.drops, sched.epoch
    return lrs, sched.drops, None
