"""Linear probes trained by full-batch gradient descent on frozen representations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from lassl.errors import DimensionError
from lassl.numeric.network import ParamSet, encode
from lassl.synthdata import Dataset

log = logging.getLogger(__name__)


def extract(params: ParamSet, dataset: Dataset) -> np.ndarray:
    """Representation matrix of the clean (unaugmented) inputs, before the head."""
    return encode(params, dataset.features64())


@dataclass(frozen=True)
class ProbeConfig:
    max_iter: int = 10_000
    tol: float = 1e-6
    fit_bias: bool = True


@dataclass
class ProbeParams:
    coef: np.ndarray  # (d,) for binary, (d, K) for multiclass
    bias: np.ndarray | float
    n_classes: int
    iterations: int = 0
    converged: bool = False
    loss_history: list[float] = field(default_factory=list)

    @property
    def binary(self) -> bool:
        return self.n_classes == 2 and self.coef.ndim == 1

    def decision(self, phi) -> np.ndarray:
        return np.asarray(phi, dtype=np.float64) @ self.coef + self.bias

    def predict_proba(self, phi) -> np.ndarray:
        z = self.decision(phi)
        if self.binary:
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, phi) -> np.ndarray:
        p = self.predict_proba(phi)
        if self.binary:
            return (p >= 0.5).astype(np.int64)
        return np.argmax(p, axis=1)


def bce_loss(phi, theta, y) -> float:
    """Mean binary cross-entropy of ``sigmoid(phi @ theta)`` against ``y``."""
    z = np.asarray(phi) @ theta
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_grad(phi, theta, y) -> np.ndarray:
    """``phi^T (y_hat - y) / n``."""
    z = np.asarray(phi) @ theta
    y_hat = 0.5 * (1.0 + np.tanh(0.5 * z))
    return phi.T @ (y_hat - y) / phi.shape[0]


def _softmax_ce(phi, w, Y):
    z = phi @ w
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - np.sum(z * Y, axis=1)))
    p = np.exp(z - lse[:, None])
    return loss, phi.T @ (p - Y) / phi.shape[0]


def probe(phi, labels, config: ProbeConfig = ProbeConfig(), n_classes: int | None = None) -> ProbeParams:
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    n, d = phi.shape
    if y.shape != (n,):
        raise DimensionError(f"{y.shape[0]} labels for {n} representations")
    K = int(n_classes if n_classes is not None else max(2, y.max() + 1))
    X = np.hstack([phi, np.ones((n, 1))]) if config.fit_bias else phi
    lam = float(np.linalg.eigvalsh(X.T @ X / n)[-1])
    lam = max(lam, 1e-12)
    history = []
    converged = False
    it = 0
    if K == 2:
        # sigmoid curvature <= 1/4
        step = 1.0 / (0.25 * lam)
        yf = y.astype(np.float64)
        theta = np.zeros(X.shape[1])
        for it in range(1, config.max_iter + 1):
            z = X @ theta
            y_hat = 0.5 * (1.0 + np.tanh(0.5 * z))
            g = X.T @ (y_hat - yf) / n
            if it == 1 or it % 100 == 0:
                history.append(float(np.mean(np.logaddexp(0.0, z) - yf * z)))
            if np.max(np.abs(g)) < config.tol:
                converged = True
                break
            theta = theta - step * g
        coef, bias = (theta[:-1], float(theta[-1])) if config.fit_bias else (theta, 0.0)
    else:
        # softmax cross-entropy curvature <= 1/2
        step = 1.0 / (0.5 * lam)
        Y = np.eye(K)[y]
        w = np.zeros((X.shape[1], K))
        for it in range(1, config.max_iter + 1):
            loss, g = _softmax_ce(X, w, Y)
            if it == 1 or it % 100 == 0:
                history.append(loss)
            if np.max(np.abs(g)) < config.tol:
                converged = True
                break
            w = w - step * g
        coef, bias = (w[:-1], w[-1]) if config.fit_bias else (w, np.zeros(K))
    if not converged:
        log.debug("probe stopped at max_iter=%d without reaching tol=%g", config.max_iter, config.tol)
    return ProbeParams(coef, bias, K, it, converged, history)
