"""Learning-speed tracking and the sampling distribution built from it.

Every example's learning speed is an EMA of the cosine between its two
projected views. Slow learners are up-weighted through the clamped linear map
``h(s) = max(s* - gamma * (s - s*), 0)``, pivoted at the ``r``-percentile
``s*`` of all EMAs, and batches are drawn i.i.d. from the normalized weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lassl.errors import ConfigError, StateError
from lassl.io import write_csv


@dataclass
class SpeedTracker:
    n: int
    eta: float = 0.1
    s_ema: np.ndarray = field(default=None)
    seen: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"EMA weight eta must be in (0, 1], got {self.eta}")
        if self.s_ema is None:
            self.s_ema = np.full(self.n, np.nan)
        if self.seen is None:
            self.seen = np.zeros(self.n, dtype=bool)

    def record(self, i: int, s_raw: float) -> "SpeedTracker":
        if not 0 <= i < self.n:
            raise IndexError(f"example index {i} out of range [0, {self.n})")
        if not math.isfinite(s_raw):
            raise ValueError(f"non-finite similarity {s_raw} for example {i}")
        if self.seen[i]:
            self.s_ema[i] = (1.0 - self.eta) * self.s_ema[i] + self.eta * s_raw
        else:
            self.s_ema[i] = s_raw
            self.seen[i] = True
        return self

    def record_all(self, s_raw) -> "SpeedTracker":
        """Vectorized :meth:`record` for a full sweep (``s_raw[i]`` for every ``i``)."""
        s = np.asarray(s_raw, dtype=np.float64)
        if s.shape != (self.n,):
            raise ValueError(f"sweep has shape {s.shape}, tracker expects ({self.n},)")
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite similarity in sweep")
        self.s_ema = np.where(self.seen, (1.0 - self.eta) * self.s_ema + self.eta * s, s)
        self.seen[:] = True
        return self


def record(tracker: SpeedTracker, i: int, s_raw: float) -> SpeedTracker:
    return tracker.record(i, s_raw)


@dataclass(frozen=True)
class ScalingParams:
    gamma: float = 10.0
    r: float = 0.01
    floor: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not 0.0 < self.r < 1.0:
            raise ConfigError("percentile r must be in (0, 1)")
        if not 0.0 <= self.floor < 1.0:
            raise ConfigError("floor must be in [0, 1)")


def percentile(values, r: float) -> float:
    """Lower nearest-rank percentile: ``sorted(values)[ceil(r * len) - 1]``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must be in (0, 1), got {r}")
    # guard against r * len landing a hair above an integer
    rank = max(1, math.ceil(r * v.size - 1e-9))
    order = np.lexsort((np.arange(v.size), v))
    return float(v[order[rank - 1]])


def scale(s, s_star: float, gamma: float):
    """Clamped linear weight; works elementwise on arrays."""
    w = np.maximum(s_star - gamma * (np.asarray(s, dtype=np.float64) - s_star), 0.0)
    return float(w) if np.ndim(w) == 0 else w


@dataclass
class SamplingState:
    pi: np.ndarray
    warmup_epochs: int = 50
    update_every: int = 20
    last_update_epoch: int = 0
    s_star: float = float("nan")
    _cdf: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def uniform(cls, n: int, warmup_epochs: int = 50, update_every: int = 20) -> "SamplingState":
        if update_every < 1:
            raise ConfigError("update_every must be >= 1")
        return cls(np.full(n, 1.0 / n), warmup_epochs, update_every)

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    def is_update_epoch(self, epoch: int) -> bool:
        return epoch > self.warmup_epochs and (epoch - self.warmup_epochs) % self.update_every == 0

    def cdf(self) -> np.ndarray:
        if self._cdf is None:
            c = np.cumsum(self.pi)
            self._cdf = c / c[-1]
        return self._cdf

    def entropy(self) -> float:
        p = self.pi[self.pi > 0]
        return float(-np.sum(p * np.log(p)))


def update_probabilities(state: SamplingState, tracker: SpeedTracker, params: ScalingParams,
                         epoch: int) -> SamplingState:
    if not np.all(tracker.seen):
        raise StateError(f"{int(np.sum(~tracker.seen))} examples have no similarity recorded yet")
    if tracker.n != state.n:
        raise StateError(f"tracker covers {tracker.n} examples, sampling state {state.n}")
    if not state.is_update_epoch(epoch):
        return state
    s_star = percentile(tracker.s_ema, params.r)
    w = scale(tracker.s_ema, s_star, params.gamma)
    total = float(np.sum(w))
    n = state.n
    if total > 0:
        pi = (1.0 - params.floor) * w / total + params.floor / n
    else:
        pi = np.full(n, 1.0 / n)
    return SamplingState(pi, state.warmup_epochs, state.update_every, epoch, s_star)


def sample_batch(state: SamplingState, b: int, rng: np.random.Generator) -> np.ndarray:
    """``b`` i.i.d. indices from the categorical ``pi`` by inverse CDF."""
    u = rng.random(b)
    return np.searchsorted(state.cdf(), u, side="right")


def dump_snapshot(path, state: SamplingState, tracker: SpeedTracker, aligned=None) -> None:
    """CSV of per-example ``pi`` and EMA, optionally tagged with the aligned flag."""
    header = ["index", "pi", "s_ema"] + (["aligned"] if aligned is not None else [])
    rows = []
    for i in range(state.n):
        row = [i, repr(float(state.pi[i])), repr(float(tracker.s_ema[i]))]
        if aligned is not None:
            row.append(int(aligned[i]))
        rows.append(row)
    write_csv(path, header, rows)
