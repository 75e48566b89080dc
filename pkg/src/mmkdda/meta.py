"""Two-loop meta-update: a short inner SGD adaptation followed by an
interpolation of the base parameters toward the adapted ones.

The interpolation weight decays exponentially with the number of tasks
seen so far (exp(-rho * t / T), t zero-based), so early tasks move the
model aggressively and later tasks increasingly preserve it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Batch
from .network import ModelState, sgd_step


@dataclass(frozen=True)
class MetaConfig:
    inner_steps: int = 2
    inner_lr: float = 0.1
    decay_rate: float = 2.0
    total_tasks: int = 5

    def __post_init__(self):
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.inner_lr <= 0:
            raise ValueError(f"inner_lr must be > 0, got {self.inner_lr}")
        if self.decay_rate < 0:
            raise ValueError(f"decay_rate must be >= 0, got {self.decay_rate}")
        if self.total_tasks < 1:
            raise ValueError(f"total_tasks must be >= 1, got {self.total_tasks}")


def balance_factor(task_index: int, cfg: MetaConfig) -> float:
    """Interpolation weight exp(-rho * t / T) for zero-based task t."""
    if task_index < 0 or task_index > cfg.total_tasks:
        raise ValueError(
            f"task index {task_index} outside [0, {cfg.total_tasks}]"
        )
    return math.exp(-cfg.decay_rate * task_index / cfg.total_tasks)


def inner_sgd(
    base: ModelState,
    batch: Batch,
    cfg: MetaConfig,
    loss_fn: Callable[[ModelState, Batch], tuple],
):
    """k gradient steps at the inner rate on a fixed batch.

    loss_fn(model, batch) must return (report, grad_vector); gradients are
    re-evaluated at every step. Returns the adapted state and the per-step
    reports; `base` is not modified.
    """
    if len(batch) == 0:
        raise ValueError("inner_sgd: empty batch")
    state = base
    reports = []
    for _ in range(cfg.inner_steps):
        report, grads = loss_fn(state, batch)
        state = sgd_step(state, grads, cfg.inner_lr)
        reports.append(report)
    return state, reports


def interpolate_update(
    base: ModelState, adapted: ModelState, task_index: int, cfg: MetaConfig
) -> ModelState:
    """base + lambda * (adapted - base) with the scheduled balance factor."""
    if base.arch != adapted.arch:
        raise ValueError("interpolate_update: base and adapted states have different archs")
    lam = balance_factor(task_index, cfg)
    if lam == 1.0:
        return adapted  # exact full step, no float round-trip
    params = base.params + lam * (adapted.params - base.params)
    return ModelState(params=params, arch=base.arch, rng_seed=base.rng_seed)
