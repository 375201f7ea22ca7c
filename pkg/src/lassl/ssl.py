"""Exponentiated-cosine similarity and the InfoNCE contrastive loss.

``infonce_var`` is the taped form used for training; ``infonce`` and
``conditional_infonce`` evaluate the loss on plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from lassl.errors import ConfigError, ContractError, InsufficientGroupError
from lassl.numeric import autodiff as ad


@dataclass(frozen=True)
class SslConfig:
    temperature: float = 0.5
    representation_dim: int = 32
    projection_dim: int = 16
    batch_size: int = 128
    symmetrize: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")


@dataclass(frozen=True)
class BatchViews:
    indices: np.ndarray
    view1: np.ndarray
    view2: np.ndarray

    def __post_init__(self):
        for v in (self.view1, self.view2):
            if v.ndim != 2 or v.shape != self.view1.shape:
                raise ContractError("views must be equally shaped matrices")
            norms = np.linalg.norm(v, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-10):
                raise ContractError("projection rows must have unit norm")
        if len(self.indices) != self.view1.shape[0]:
            raise ContractError("one index per row is required")

    def __len__(self):
        return self.view1.shape[0]


def _check_unit(v, tol=1e-6):
    if abs(float(np.linalg.norm(v)) - 1.0) > tol:
        raise ContractError(f"similarity expects unit vectors, got norm {np.linalg.norm(v):.8g}")


def similarity(u, v, temperature: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_unit(u)
    _check_unit(v)
    return math.exp(float(u @ v) / temperature)


def infonce_var(z1, z2, temperature: float, symmetrize: bool = False) -> ad.Var:
    """Mean over anchors of ``-log softmax(z1 z2^T / tau)[a, a]``.

    The softmax denominator over a full row is the positive term plus the
    ``b - 1`` in-batch negatives taken from the second view. The logsumexp is
    max-shifted.
    """
    logits = ad.scale(ad.matmul(z1, ad.transpose(z2)), 1.0 / temperature)
    loss = ad.mean(ad.sub(ad.logsumexp_rows(logits), ad.diag(logits)))
    if symmetrize:
        flipped = ad.transpose(logits)
        other = ad.mean(ad.sub(ad.logsumexp_rows(flipped), ad.diag(flipped)))
        loss = ad.scale(ad.add(loss, other), 0.5)
    return loss


def infonce(batch: BatchViews, temperature: float, symmetrize: bool = False) -> float:
    if len(batch) < 2:
        raise ContractError("InfoNCE needs at least two examples")
    return float(infonce_var(batch.view1, batch.view2, temperature, symmetrize).value)


def conditional_batch_indices(values: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an attribute value uniformly, then ``batch_size`` distinct members sharing it."""
    values = np.asarray(values)
    levels = np.unique(values)
    z = levels[rng.integers(len(levels))]
    members = np.flatnonzero(values == z)
    if len(members) < batch_size:
        raise InsufficientGroupError(
            f"attribute value {z} has {len(members)} examples, fewer than batch size {batch_size}"
        )
    return rng.choice(members, size=batch_size, replace=False)


def conditional_infonce(groups: Mapping[int, BatchViews] | Sequence[BatchViews], temperature: float,
                        batch_size: int, rng: np.random.Generator, n_batches: int = 1,
                        symmetrize: bool = False) -> float:
    """InfoNCE restricted to batches that share one attribute value.

    ``groups`` holds, per attribute value, the projections of every member.
    Each of ``n_batches`` draws picks a value uniformly and ``batch_size``
    members of that group without replacement; the result is the mean loss.
    """
    groups = list(groups.values()) if isinstance(groups, Mapping) else list(groups)
    for g in groups:
        if len(g) < batch_size:
            raise InsufficientGroupError(f"group of size {len(g)} is smaller than batch size {batch_size}")
    total = 0.0
    for _ in range(n_batches):
        g = groups[rng.integers(len(groups))]
        pick = rng.choice(len(g), size=batch_size, replace=False)
        total += float(infonce_var(g.view1[pick], g.view2[pick], temperature, symmetrize).value)
    return total / n_batches
