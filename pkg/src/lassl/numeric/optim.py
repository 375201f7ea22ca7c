"""Plain SGD with L2 weight decay and a linear-warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lassl.errors import DimensionError
from lassl.numeric.network import ParamSet


@dataclass(frozen=True)
class Schedule:
    lr_max: float = 0.5
    total_epochs: int = 300
    warmup_epochs: int = 10
    weight_decay: float = 1e-4

    def lr(self, epoch: float) -> float:
        """Learning rate at a (possibly fractional) epoch position in [0, T]."""
        t = min(max(float(epoch), 0.0), float(self.total_epochs))
        if self.warmup_epochs > 0 and t < self.warmup_epochs:
            return self.lr_max * t / self.warmup_epochs
        span = self.total_epochs - self.warmup_epochs
        if span <= 0:
            return self.lr_max
        return self.lr_max * 0.5 * (1.0 + math.cos(math.pi * (t - self.warmup_epochs) / span))


def sgd_step(params: ParamSet, grads: dict[str, np.ndarray], epoch: float, schedule: Schedule) -> ParamSet:
    """Return new parameters ``p - lr(epoch) * (g + weight_decay * p)``."""
    lr = schedule.lr(epoch)
    wd = schedule.weight_decay
    out = {}
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        out[name] = p - lr * (g + wd * p)
    return ParamSet(params.encoder_widths, params.head_widths, out)
