"""Dense float64 numerics: matrix helpers, reverse-mode autodiff, MLP, SGD."""

import numpy as np

from lassl.errors import DegenerateRowError, DimensionError
from lassl.numeric.network import ParamSet, backward, encode, forward, init_params
from lassl.numeric.optim import Schedule, sgd_step


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def l2_normalize_rows(m, eps: float = 1e-12) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {m.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if np.any(norms < eps):
        raise DegenerateRowError(f"row {int(np.argmax(norms < eps))} has norm below {eps}")
    return m / norms[:, None]


__all__ = [
    "ParamSet",
    "Schedule",
    "backward",
    "encode",
    "forward",
    "init_params",
    "l2_normalize_rows",
    "matmul",
    "sgd_step",
]
