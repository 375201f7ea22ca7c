"""Synthetic vector datasets with controllable spurious correlations.

Each example is a sum of orthonormal prototype directions, one for the target
value and one per confound value, plus isotropic Gaussian noise. Within every
target class a fixed fraction ``k`` of examples carries the confound value
equal to the target value (correlation-aligned); the rest draw the confound
uniformly from the other categories (correlation-conflicting).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from lassl.errors import ConfigError, DimensionError, FormatError, VersionMismatchError
from lassl.io import atomic_write_bytes

MAGIC = b"LASD"
VERSION = 1

TRAIN, TEST = 0, 1


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    cardinality: int

    def __post_init__(self):
        if self.cardinality < 2:
            raise ConfigError(f"attribute {self.name!r} needs cardinality >= 2, got {self.cardinality}")


@dataclass(frozen=True)
class ConfoundSpec:
    attribute: AttributeSpec
    aligned_ratio: float = 0.95
    signal_scale: float = 2.0


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 10_000
    input_dim: int = 64
    target: AttributeSpec = AttributeSpec("target", 10)
    confounds: tuple[ConfoundSpec, ...] = (ConfoundSpec(AttributeSpec("confound0", 10)),)
    target_signal_scale: float = 1.5
    noise_sigma: float = 0.25
    seed: int = 0
    split: int = TRAIN

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be positive")
        if not self.confounds:
            raise ConfigError("at least one confound is required")
        K = self.target.cardinality
        for c in self.confounds:
            if c.attribute.cardinality != K:
                raise ConfigError(
                    f"confound {c.attribute.name!r} has cardinality {c.attribute.cardinality}, target has {K}"
                )
            if not 0.0 <= c.aligned_ratio <= 1.0:
                raise ConfigError(f"aligned ratio {c.aligned_ratio} outside [0, 1]")
            if not c.signal_scale > 0:
                raise ConfigError("confound signal scale must be positive")
        if not self.target_signal_scale > 0:
            raise ConfigError("target signal scale must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        need = (1 + len(self.confounds)) * K
        if self.input_dim < need:
            raise DimensionError(
                f"input_dim {self.input_dim} < {need}: prototypes cannot be mutually orthogonal"
            )

    @property
    def cardinality(self) -> int:
        return self.target.cardinality


def with_aligned_ratio(config: GeneratorConfig, ratio: float) -> GeneratorConfig:
    return replace(config, confounds=tuple(replace(c, aligned_ratio=ratio) for c in config.confounds))


def heldout_config(config: GeneratorConfig, n: int | None = None, aligned_ratio: float | None = None) -> GeneratorConfig:
    """Config for the held-out split: same prototypes, correlation-free by default (k = 1/K)."""
    ratio = 1.0 / config.cardinality if aligned_ratio is None else aligned_ratio
    return replace(with_aligned_ratio(config, ratio), n=config.n if n is None else n, split=TEST)


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    target_value: int
    confound_values: tuple[int, ...]
    aligned: tuple[bool, ...]


@dataclass(eq=False)
class Dataset:
    config: GeneratorConfig
    features: np.ndarray  # (n, m) float32
    targets: np.ndarray  # (n,) int64
    confounds: np.ndarray  # (n, J) int64
    aligned: np.ndarray = field(init=False)  # (n, J) bool

    def __post_init__(self):
        self.aligned = self.confounds == self.targets[:, None]

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def example(self, i: int) -> Example:
        return Example(
            self.features[i],
            int(self.targets[i]),
            tuple(int(c) for c in self.confounds[i]),
            tuple(bool(a) for a in self.aligned[i]),
        )

    def features64(self) -> np.ndarray:
        return self.features.astype(np.float64)


def prototypes(config: GeneratorConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    """Orthonormal prototype rows ``u`` (K, m) and ``v_j`` (K, m), shared by every split."""
    config.validate()
    K = config.cardinality
    J = len(config.confounds)
    rng = np.random.default_rng([config.seed, 0])
    g = rng.standard_normal((config.input_dim, (1 + J) * K))
    q, _ = np.linalg.qr(g)
    rows = q.T
    return rows[:K], [rows[K * (1 + j) : K * (2 + j)] for j in range(J)]


def generate(config: GeneratorConfig) -> Dataset:
    config.validate()
    K = config.cardinality
    n = config.n
    u, vs = prototypes(config)
    rng = np.random.default_rng([config.seed, 1, config.split])

    targets = rng.permutation(np.arange(n) % K)
    confounds = np.empty((n, len(config.confounds)), dtype=np.int64)
    for j, spec in enumerate(config.confounds):
        for c in range(K):
            members = np.flatnonzero(targets == c)
            n_aligned = math.floor(spec.aligned_ratio * len(members))
            order = rng.permutation(members)
            confounds[order[:n_aligned], j] = c
            rest = order[n_aligned:]
            # uniform over the other K - 1 categories
            draw = rng.integers(0, K - 1, size=len(rest))
            confounds[rest, j] = draw + (draw >= c)

    x = config.target_signal_scale * u[targets]
    for j, spec in enumerate(config.confounds):
        x += spec.signal_scale * vs[j][confounds[:, j]]
    x += config.noise_sigma * rng.standard_normal((n, config.input_dim))
    return Dataset(config, x.astype(np.float32), targets.astype(np.int64), confounds)


def partition_by_alignment(ds: Dataset, confound_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Indices of correlation-aligned and correlation-conflicting examples."""
    if not 0 <= confound_index < ds.confounds.shape[1]:
        raise IndexError(f"confound index {confound_index} out of range [0, {ds.confounds.shape[1]})")
    flags = ds.aligned[:, confound_index]
    return np.flatnonzero(flags), np.flatnonzero(~flags)


# ------------------------------------------------------------------ file I/O


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.buf):
            raise FormatError(f"truncated dataset file while reading {what}")
        out = self.buf[self.pos : self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (k,) = self.unpack("<H", what)
        try:
            return self.take(k, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"bad text in {what}") from exc


def to_bytes(ds: Dataset) -> bytes:
    c = ds.config
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<IIIq", c.n, c.input_dim, c.split, c.seed),
        struct.pack("<dd", c.target_signal_scale, c.noise_sigma),
        _pack_str(c.target.name),
        struct.pack("<I", c.target.cardinality),
        struct.pack("<I", len(c.confounds)),
    ]
    for spec in c.confounds:
        parts.append(_pack_str(spec.attribute.name))
        parts.append(struct.pack("<Idd", spec.attribute.cardinality, spec.aligned_ratio, spec.signal_scale))
    parts.append(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
    parts.append(ds.targets.astype("<u2").tobytes())
    parts.append(np.ascontiguousarray(ds.confounds.T, dtype="<u2").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Dataset:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"dataset version {version}, expected {VERSION}")
    n, m, split, seed = r.unpack("<IIIq", "config")
    target_scale, noise = r.unpack("<dd", "config")
    target = AttributeSpec(r.string("target name"), r.unpack("<I", "target")[0])
    (J,) = r.unpack("<I", "confound count")
    confounds = []
    for _ in range(J):
        name = r.string("confound name")
        card, k, s = r.unpack("<Idd", "confound spec")
        confounds.append(ConfoundSpec(AttributeSpec(name, card), k, s))
    config = GeneratorConfig(n, m, target, tuple(confounds), target_scale, noise, seed, split)
    feats = np.frombuffer(r.take(4 * n * m, "features"), dtype="<f4").reshape(n, m).astype(np.float32)
    targets = np.frombuffer(r.take(2 * n, "targets"), dtype="<u2").astype(np.int64)
    conf = np.frombuffer(r.take(2 * n * J, "confounds"), dtype="<u2").reshape(J, n).T.astype(np.int64)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after dataset payload")
    return Dataset(config, feats, targets, np.ascontiguousarray(conf))


def write(ds: Dataset, path) -> None:
    atomic_write_bytes(path, to_bytes(ds))


def read(path) -> Dataset:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
