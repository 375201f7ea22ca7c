"""Per-subgroup accuracy, AUROC, precision and recall."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from lassl.errors import DimensionError


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with ties counted as one half; NaN unless both classes occur."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class SubgroupMetrics:
    size: int
    prevalence: float  # share of all examples falling in the subgroup
    positive_rate: float
    accuracy: float
    auroc: float
    precision: float
    recall: float

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def _ratio(a: float, b: float) -> float:
    return a / b if b else float("nan")


def _binary(scores, labels, total: int, threshold: float) -> SubgroupMetrics:
    y = labels.astype(bool)
    pred = scores >= threshold
    tp = float(np.sum(pred & y))
    return SubgroupMetrics(
        size=int(y.size),
        prevalence=_ratio(y.size, total),
        positive_rate=float(np.mean(y)) if y.size else float("nan"),
        accuracy=float(np.mean(pred == y)) if y.size else float("nan"),
        auroc=auroc(scores, y),
        precision=_ratio(tp, float(np.sum(pred))),
        recall=_ratio(tp, float(np.sum(y))),
    )


def subgroup_metrics(scores, labels, groups=None, threshold: float = 0.5) -> dict[str, SubgroupMetrics]:
    """Binary metrics for every subgroup label in ``groups`` plus an ``"all"`` entry."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    n = scores.size
    out = {"all": _binary(scores, labels, n, threshold)}
    if groups is not None:
        groups = np.asarray(groups)
        if groups.shape != scores.shape:
            raise DimensionError("subgroup assignment must align with scores")
        for g in sorted(set(groups.tolist()), key=str):
            m = groups == g
            out[str(g)] = _binary(scores[m], labels[m], n, threshold)
    return out


def multiclass_subgroup_metrics(probs, labels, groups=None) -> dict[str, SubgroupMetrics]:
    """Accuracy from argmax; AUROC, precision and recall macro-averaged one-vs-rest."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n, K = probs.shape
    pred = np.argmax(probs, axis=1)

    def one(mask) -> SubgroupMetrics:
        p, y, yhat = probs[mask], labels[mask], pred[mask]
        aucs, precs, recs = [], [], []
        for k in range(K):
            a = auroc(p[:, k], y == k)
            if not math.isnan(a):
                aucs.append(a)
            tp = float(np.sum((yhat == k) & (y == k)))
            if np.any(yhat == k):
                precs.append(tp / float(np.sum(yhat == k)))
            if np.any(y == k):
                recs.append(tp / float(np.sum(y == k)))
        mean = lambda v: float(np.mean(v)) if v else float("nan")  # noqa: E731
        return SubgroupMetrics(int(y.size), _ratio(y.size, n), float("nan"),
                               float(np.mean(yhat == y)) if y.size else float("nan"),
                               mean(aucs), mean(precs), mean(recs))

    out = {"all": one(np.ones(n, dtype=bool))}
    if groups is not None:
        groups = np.asarray(groups)
        for g in sorted(set(groups.tolist()), key=str):
            out[str(g)] = one(groups == g)
    return out
