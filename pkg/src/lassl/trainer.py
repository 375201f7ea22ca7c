"""Contrastive pretraining with uniform, learning-speed or attribute-conditioned sampling.

Epoch ``t`` (1-based) proceeds as:

1. in ``learning_speed`` mode, refresh ``pi`` from the tracked EMAs if ``t``
   is an update epoch;
2. run ``batches_per_epoch`` SGD steps on InfoNCE over two augmented views
   of batches drawn from the active sampler;
3. sweep the whole dataset without gradients, feeding the per-example
   two-view cosines to the tracker and to the run log.

The sweep at the end of epoch ``t`` is the similarity the next epoch's update
sees, so step 1 at epoch ``t + 1`` matches "compute similarities, smooth,
reweight, then optimize".
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from lassl.augment import SWEEP_STREAM, TRAIN_STREAM, AugmentPolicy, augment_rows
from lassl.errors import ConfigError, ConsistencyError, DivergenceError, FormatError, VersionMismatchError
from lassl.io import atomic_write_bytes, write_csv
from lassl.numeric import autodiff as ad
from lassl.numeric.network import ParamSet, forward, init_params, read_params, write_params
from lassl.numeric.optim import Schedule, sgd_step
from lassl.sampler import (
    SamplingState,
    ScalingParams,
    SpeedTracker,
    sample_batch,
    update_probabilities,
)
from lassl.ssl import SslConfig, conditional_batch_indices, infonce_var
from lassl.synthdata import Dataset, partition_by_alignment

log = logging.getLogger(__name__)

MODES = ("uniform", "learning_speed", "conditional_oracle")
CKPT_MAGIC = b"LACK"
CKPT_VERSION = 1
LOG_COLUMNS = ("epoch", "loss", "sim_aligned_mean", "sim_conflicting_mean", "lr", "pi_entropy", "pi_min", "pi_max")

_BATCH_STREAM = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batches_per_epoch: int | None = None  # None -> ceil(n / b)
    lr_max: float = 0.5
    weight_decay: float = 1e-4
    lr_warmup_epochs: int = 10
    ssl: SslConfig = field(default_factory=SslConfig)
    scaling: ScalingParams = field(default_factory=ScalingParams)
    warmup_epochs: int = 50
    update_every: int = 20
    eta: float = 0.1
    mode: str = "uniform"
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (64,)
    head_hidden: tuple[int, ...] = (32,)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    oracle_confound: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown sampler mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            raise ConfigError("batches_per_epoch must be >= 1")
        if self.mode == "learning_speed" and self.epochs <= self.warmup_epochs:
            log.warning("learning_speed run with T <= T_warmup never leaves uniform sampling")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def schedule(self) -> Schedule:
        return Schedule(self.lr_max, self.epochs, self.lr_warmup_epochs, self.weight_decay)

    def widths(self, input_dim: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        d = self.ssl.representation_dim
        return (input_dim, *self.encoder_hidden, d), (d, *self.head_hidden, self.ssl.projection_dim)

    def n_batches(self, n: int) -> int:
        return self.batches_per_epoch or math.ceil(n / self.ssl.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["ssl"] = SslConfig(**d["ssl"])
    d["scaling"] = ScalingParams(**d["scaling"])
    aug = dict(d["augment"])
    aug["scale_range"] = tuple(aug["scale_range"])
    d["augment"] = AugmentPolicy(**aug)
    d["encoder_hidden"] = tuple(d["encoder_hidden"])
    d["head_hidden"] = tuple(d["head_hidden"])
    known = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in d.items() if k in known})


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    sim_aligned_mean: float
    sim_conflicting_mean: float
    lr: float
    pi_entropy: float
    pi_min: float
    pi_max: float

    def row(self) -> list:
        return [self.epoch] + [repr(float(getattr(self, c))) for c in LOG_COLUMNS[1:]]


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_csv(self, path) -> None:
        write_csv(path, LOG_COLUMNS, [r.row() for r in self.records])

    def csv_text(self) -> str:
        lines = [",".join(LOG_COLUMNS)] + [",".join(str(x) for x in r.row()) for r in self.records]
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    params: ParamSet
    log: RunLog
    state: SamplingState
    tracker: SpeedTracker
    last_sweep: np.ndarray
    epoch: int = 0
    wall_time: float = 0.0


# ------------------------------------------------------------------ sweeps


def similarity_sweep(dataset: Dataset, params: ParamSet, epoch: int, policy: AugmentPolicy,
                     chunk: int = 4096, threads: int = 1) -> np.ndarray:
    """Cosine between the two projected views of every example; no parameter update."""
    x = dataset.features
    n = x.shape[0]
    out = np.empty(n)

    def work(start):
        stop = min(start + chunk, n)
        idx = np.arange(start, stop)
        rows = x[start:stop].astype(np.float64)
        v1 = augment_rows(rows, policy, epoch, idx, 0, stream=SWEEP_STREAM)
        v2 = augment_rows(rows, policy, epoch, idx, 1, stream=SWEEP_STREAM)
        _, p1 = forward(params, v1)
        _, p2 = forward(params, v2)
        out[start:stop] = np.einsum("ij,ij->i", p1, p2)

    starts = range(0, n, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return out


def _subgroup_means(sims: np.ndarray, dataset: Dataset) -> tuple[float, float]:
    aligned, conflicting = partition_by_alignment(dataset, 0)
    sa = float(np.mean(sims[aligned])) if len(aligned) else float("nan")
    sc = float(np.mean(sims[conflicting])) if len(conflicting) else float("nan")
    return sa, sc


def _ordinals(idx: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """k-th occurrence of each index within the epoch, so repeated draws get fresh views."""
    out = np.empty(len(idx), dtype=np.int64)
    for pos, i in enumerate(idx):
        out[pos] = counts[i]
        counts[i] += 1
    return out


# ------------------------------------------------------------------ training


def train_step(params: ParamSet, x1: np.ndarray, x2: np.ndarray, config: TrainConfig):
    """InfoNCE loss and gradients for one batch of paired views."""
    b = x1.shape[0]
    _, proj = forward(params, np.vstack([x1, x2]), record_tape=True)
    z1 = ad.take_rows(proj, 0, b)
    z2 = ad.take_rows(proj, b, 2 * b)
    loss = infonce_var(z1, z2, config.ssl.temperature, config.ssl.symmetrize)
    return float(loss.value), ad.backward(loss)


def pretrain(dataset: Dataset, config: TrainConfig, resume_from: RunResult | None = None,
             stop_after: int | None = None, checkpoint_path=None) -> RunResult:
    """Run epochs ``resume_from.epoch + 1`` .. ``stop_after or T``."""
    config.validate()
    n = dataset.n
    if n < config.ssl.batch_size and config.mode == "conditional_oracle":
        raise ConfigError("dataset smaller than one batch")
    b = config.ssl.batch_size
    schedule = config.schedule()
    n_batches = config.n_batches(n)
    feats = dataset.features
    oracle_values = dataset.confounds[:, config.oracle_confound] if config.mode == "conditional_oracle" else None
    t0 = time.perf_counter()

    if resume_from is None:
        enc_w, head_w = config.widths(dataset.config.input_dim)
        params = init_params(enc_w, head_w, config.seed)
        state = SamplingState.uniform(n, config.warmup_epochs, config.update_every)
        tracker = SpeedTracker(n, config.eta)
        runlog = RunLog()
        start = 1
        last = np.full(n, np.nan)
        if config.mode == "learning_speed" and state.is_update_epoch(1):
            tracker.record_all(similarity_sweep(dataset, params, 0, config.augment, threads=config.threads))
    else:
        if resume_from.state.n != n:
            raise ConsistencyError(f"checkpoint covers {resume_from.state.n} examples, dataset has {n}")
        params = resume_from.params.copy()
        state = resume_from.state
        tracker = resume_from.tracker
        runlog = RunLog(list(resume_from.log.records))
        start = resume_from.epoch + 1
        last = resume_from.last_sweep

    end = config.epochs if stop_after is None else min(stop_after, config.epochs)
    for t in range(start, end + 1):
        if config.mode == "learning_speed" and state.is_update_epoch(t):
            state = update_probabilities(state, tracker, config.scaling, t)
            log.debug("epoch %d: pi updated, s*=%.4f, entropy=%.3f", t, state.s_star, state.entropy())

        rng = np.random.default_rng([config.seed, _BATCH_STREAM, t])
        counts = np.zeros(n, dtype=np.int64)
        loss_sum = 0.0
        for k in range(n_batches):
            if oracle_values is not None:
                idx = conditional_batch_indices(oracle_values, b, rng)
            else:
                idx = sample_batch(state, b, rng)
            ords = _ordinals(idx, counts)
            rows = feats[idx].astype(np.float64)
            x1 = augment_rows(rows, config.augment, t, idx, 0, ords, TRAIN_STREAM)
            x2 = augment_rows(rows, config.augment, t, idx, 1, ords, TRAIN_STREAM)
            loss, grads = train_step(params, x1, x2, config)
            if not math.isfinite(loss):
                raise DivergenceError(t, k, f"loss={loss}")
            params = sgd_step(params, grads, (t - 1) + k / n_batches, schedule)
            loss_sum += loss
        if not params.is_finite():
            raise DivergenceError(t, n_batches - 1, "non-finite parameters")

        last = similarity_sweep(dataset, params, t, config.augment, threads=config.threads)
        tracker.record_all(last)
        sa, sc = _subgroup_means(last, dataset)
        runlog.records.append(EpochRecord(
            t, loss_sum / n_batches, sa, sc, schedule.lr(t - 1),
            state.entropy(), float(state.pi.min()), float(state.pi.max()),
        ))
        if t % 25 == 0 or t == end:
            log.info("epoch %d/%d loss %.4f aligned %.4f conflicting %.4f", t, config.epochs,
                     runlog.records[-1].loss, sa, sc)

    result = RunResult(params, runlog, state, tracker, last, end, time.perf_counter() - t0)
    if checkpoint_path is not None:
        checkpoint(result, config, checkpoint_path)
    return result


# ------------------------------------------------------------------ checkpoints


def checkpoint_bytes(result: RunResult, config: TrainConfig) -> bytes:
    n = result.state.n
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<III", CKPT_VERSION, result.epoch, n))
    write_params(result.params, buf)
    st = result.state
    buf.write(np.ascontiguousarray(st.pi, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(result.tracker.s_ema, dtype="<f8").tobytes())
    buf.write(result.tracker.seen.astype("u1").tobytes())
    buf.write(np.ascontiguousarray(result.last_sweep, dtype="<f8").tobytes())
    buf.write(struct.pack("<iiidd", st.warmup_epochs, st.update_every, st.last_update_epoch, st.s_star,
                          result.tracker.eta))
    buf.write(struct.pack("<I", len(result.log)))
    for r in result.log.records:
        buf.write(struct.pack("<i7d", r.epoch, *[float(getattr(r, c)) for c in LOG_COLUMNS[1:]]))
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    return buf.getvalue()


def checkpoint(result: RunResult, config: TrainConfig, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(result, config))


def _take(fh, size, what):
    raw = fh.read(size)
    if len(raw) != size:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return raw


def resume_bytes(raw: bytes, dataset: Dataset | None = None) -> tuple[RunResult, TrainConfig]:
    fh = io.BytesIO(raw)
    if _take(fh, 4, "magic") != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, epoch, n = struct.unpack("<III", _take(fh, 12, "header"))
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CKPT_VERSION}")
    if dataset is not None and dataset.n != n:
        raise ConsistencyError(f"checkpoint covers {n} examples, dataset has {dataset.n}")
    params = read_params(fh)
    pi = np.frombuffer(_take(fh, 8 * n, "pi"), dtype="<f8").astype(np.float64)
    s_ema = np.frombuffer(_take(fh, 8 * n, "s_ema"), dtype="<f8").astype(np.float64)
    seen = np.frombuffer(_take(fh, n, "seen"), dtype="u1").astype(bool)
    last = np.frombuffer(_take(fh, 8 * n, "sweep"), dtype="<f8").astype(np.float64)
    warm, every, last_upd, s_star, eta = struct.unpack("<iiidd", _take(fh, 28, "sampler state"))
    (n_rec,) = struct.unpack("<I", _take(fh, 4, "log length"))
    records = []
    rec_size = struct.calcsize("<i7d")
    for _ in range(n_rec):
        vals = struct.unpack("<i7d", _take(fh, rec_size, "log record"))
        records.append(EpochRecord(*vals))
    (k,) = struct.unpack("<I", _take(fh, 4, "config length"))
    try:
        config = config_from_dict(json.loads(_take(fh, k, "config").decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable config in checkpoint: {exc}") from exc
    if fh.read(1):
        raise FormatError("trailing bytes after checkpoint payload")
    state = SamplingState(pi, warm, every, last_upd, s_star)
    tracker = SpeedTracker(n, eta, s_ema, seen)
    return RunResult(params, RunLog(records), state, tracker, last, epoch), config


def resume(path, dataset: Dataset | None = None) -> tuple[RunResult, TrainConfig]:
    with open(path, "rb") as fh:
        return resume_bytes(fh.read(), dataset)


def summary(result: RunResult, config: TrainConfig, extra: dict | None = None) -> dict:
    last = result.log.records[-1] if result.log.records else None
    out = {
        "epochs_completed": result.epoch,
        "final": asdict(last) if last else None,
        "final_gap": (last.sim_aligned_mean - last.sim_conflicting_mean) if last else None,
        "config": config.to_dict(),
        "wall_time_seconds": result.wall_time,
    }
    if extra:
        out.update(extra)
    return out
