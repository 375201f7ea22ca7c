"""Two stochastic views per example: additive jitter, coordinate masking, rescaling.

Randomness is counter-based: every draw is a splitmix64 hash of
``(seed, stream, epoch, example index, ordinal, view slot, coordinate)``. An
example's views therefore never depend on which other examples were sampled,
how often, or in what order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lassl.errors import ConfigError

TRAIN_STREAM = 1
SWEEP_STREAM = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK24 = (1 << 24) - 1
_INV24 = 1.0 / (1 << 24)
_COS_TABLE = np.cos(2.0 * np.pi * (np.arange(1 << 16) + 0.5) / (1 << 16))


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def keyed_hash(*keys) -> np.ndarray:
    """Broadcast-hash a sequence of integer keys (scalars or arrays) to uint64."""
    with np.errstate(over="ignore"):
        h = np.zeros((), dtype=np.uint64)
        for k in keys:
            h = _mix(h ^ np.asarray(k).astype(np.uint64))
    return h


@dataclass(frozen=True)
class AugmentPolicy:
    jitter_sigma: float = 0.5
    mask_fraction: float = 0.2
    scale_range: tuple[float, float] = (0.8, 1.25)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ConfigError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ConfigError(f"mask_fraction must be in [0, 1), got {self.mask_fraction}")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be non-negative")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentPolicy":
        return cls(0.0, 0.0, (1.0, 1.0), seed)


def augment_rows(x, policy: AugmentPolicy, epoch: int, indices, slot: int,
                 ordinals=None, stream: int = TRAIN_STREAM) -> np.ndarray:
    """One view (slot 0 or 1) of each row of ``x``; ``indices`` are dataset indices."""
    x = np.asarray(x, dtype=np.float64)
    n, m = x.shape
    idx = np.asarray(indices, dtype=np.int64).reshape(n)
    ords = np.zeros(n, dtype=np.int64) if ordinals is None else np.asarray(ordinals, dtype=np.int64)
    row_key = keyed_hash(policy.seed, stream, epoch, idx, ords, slot)

    with np.errstate(over="ignore"):
        cell = _mix(row_key[:, None] ^ np.arange(m, dtype=np.uint64)[None, :])
        row = _mix(row_key ^ np.uint64(m + 0x5CA1E))
    # one 64-bit hash per cell: 24 bits for the Box-Muller radius, 16 for the
    # angle (table lookup), 24 for the mask
    out = x
    if policy.jitter_sigma > 0:
        u1 = ((cell >> np.uint64(40)).astype(np.float32) + np.float32(0.5)) * np.float32(_INV24)
        radius = np.sqrt(np.float32(-2.0) * np.log(u1))
        angle = ((cell >> np.uint64(24)) & np.uint64(0xFFFF)).astype(np.intp)
        out = out + policy.jitter_sigma * (radius * _COS_TABLE[angle])
    if policy.mask_fraction > 0:
        cut = np.uint64(int(policy.mask_fraction * (1 << 24)))
        out = out * ((cell & np.uint64(_MASK24)) >= cut)
    lo_s, hi_s = policy.scale_range
    if hi_s > lo_s:
        # log-uniform, symmetric for ranges like (0.8, 1.25)
        u = ((row >> np.uint64(11)).astype(np.float64) + 0.5) / 9007199254740992.0
        s = np.exp(math.log(lo_s) + u * (math.log(hi_s) - math.log(lo_s)))
        out = out * s[:, None]
    elif lo_s != 1.0:
        out = out * lo_s
    return np.array(out, dtype=np.float64, copy=True)


def two_views_batch(x, policy: AugmentPolicy, epoch: int, indices, ordinals=None,
                    stream: int = TRAIN_STREAM) -> tuple[np.ndarray, np.ndarray]:
    return (
        augment_rows(x, policy, epoch, indices, 0, ordinals, stream),
        augment_rows(x, policy, epoch, indices, 1, ordinals, stream),
    )


def two_views(x, policy: AugmentPolicy, epoch: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Both views of a single feature vector."""
    row = np.asarray(x, dtype=np.float64).reshape(1, -1)
    v1, v2 = two_views_batch(row, policy, epoch, [index])
    return v1[0], v2[0]
