"""Singular spectra of representation matrices.

Singular values come from a one-sided Jacobi SVD, which orthogonalizes the
columns of a working copy of ``Phi`` by plane rotations; the column norms
converge to the singular values and the accumulated rotations to ``V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lassl.errors import DimensionError


def jacobi_svd(a, tol: float = 1e-15, max_sweeps: int = 60):
    """Thin SVD ``a = U diag(s) V^T`` with ``s`` sorted non-increasing.

    Works on the wider side's transpose so the rotated matrix always has at
    least as many rows as columns.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    if a.shape[0] < a.shape[1]:
        u, s, v = jacobi_svd(a.T, tol, max_sweeps)
        return v, s, u
    w = a.copy()
    n = w.shape[1]
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp, wq = w[:, p], w[:, q]
                alpha = wp @ wp
                beta = wq @ wq
                gamma = wp @ wq
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * wp - s * wq
                w[:, q] = s * wp + c * wq
                w[:, p] = new_p
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    sv = np.linalg.norm(w, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    nz = sv > 0
    u[:, nz] = w[:, nz] / sv[nz]
    return u, sv, v


def tail_start(d: int) -> int:
    """Number of leading singular values excluded from the tail mass (10% of d, rounded up)."""
    return math.ceil(0.1 * d - 1e-12)


@dataclass
class SpectrumReport:
    singular_values: np.ndarray  # unnormalized, non-increasing
    normalized: np.ndarray  # divided by the leading value
    dim: int

    @property
    def tail_mass(self) -> float:
        return float(np.sum(self.normalized[tail_start(self.dim):]))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "singular_values": [float(x) for x in self.singular_values],
            "normalized": [float(x) for x in self.normalized],
            "tail_mass": self.tail_mass,
        }


def spectrum(phi) -> SpectrumReport:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {phi.shape}")
    if not np.any(phi):
        raise ValueError("spectrum of an all-zero matrix is undefined")
    _, s, _ = jacobi_svd(phi)
    return SpectrumReport(s, s / s[0], phi.shape[1])


def compare_spectra(a: SpectrumReport, b: SpectrumReport) -> float:
    """Tail mass of ``a`` minus tail mass of ``b``."""
    if a.dim != b.dim:
        raise DimensionError(f"spectra over {a.dim} and {b.dim} dimensions are not comparable")
    return a.tail_mass - b.tail_mass


def gradient_identity_check(phi, theta, y) -> float:
    """Relative gap between ``Phi^T r`` and ``V S U^T r`` with ``r = sigmoid(Phi theta) - y``."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if phi.shape[1] != theta.shape[0] or phi.shape[0] != y.shape[0]:
        raise DimensionError("inconsistent shapes for the gradient identity")
    r = 0.5 * (1.0 + np.tanh(0.5 * (phi @ theta))) - y
    u, s, v = jacobi_svd(phi)
    direct = phi.T @ r
    via_svd = v @ (s * (u.T @ r))
    denom = np.linalg.norm(direct)
    if denom == 0.0:
        return float(np.linalg.norm(via_svd))
    return float(np.linalg.norm(direct - via_svd) / denom)
