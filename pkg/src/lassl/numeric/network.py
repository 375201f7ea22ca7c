"""Encoder + projection-head MLP, its parameters and their binary form."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from lassl.errors import DimensionError, FormatError, VersionMismatchError
from lassl.numeric import autodiff as ad

PARAM_MAGIC = b"LAPM"
PARAM_VERSION = 1


@dataclass
class ParamSet:
    """Weights and biases of the encoder ``f`` and the projection head ``psi``.

    ``encoder_widths`` is (m, ..., d) and ``head_widths`` is (d, ..., d').
    Arrays are keyed ``enc.{i}.W`` / ``enc.{i}.b`` / ``head.{j}.W`` / ``head.{j}.b``.
    """

    encoder_widths: tuple[int, ...]
    head_widths: tuple[int, ...]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.head_widths = tuple(int(w) for w in self.head_widths)
        if len(self.encoder_widths) < 2 or len(self.head_widths) < 2:
            raise DimensionError("encoder and head need at least an input and an output width")
        if self.encoder_widths[-1] != self.head_widths[0]:
            raise DimensionError(
                f"encoder output width {self.encoder_widths[-1]} != head input width {self.head_widths[0]}"
            )
        for name, (rows, cols) in self.shapes().items():
            arr = self.arrays.get(name)
            if arr is None:
                continue
            want = (rows, cols) if cols else (rows,)
            if arr.shape != want:
                raise DimensionError(f"{name}: expected shape {want}, got {arr.shape}")

    @property
    def input_dim(self) -> int:
        return self.encoder_widths[0]

    @property
    def representation_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def projection_dim(self) -> int:
        return self.head_widths[-1]

    def shapes(self) -> dict[str, tuple[int, int]]:
        # bias entries use cols == 0 as a marker for a vector
        out = {}
        for prefix, widths in (("enc", self.encoder_widths), ("head", self.head_widths)):
            for i in range(len(widths) - 1):
                out[f"{prefix}.{i}.W"] = (widths[i], widths[i + 1])
                out[f"{prefix}.{i}.b"] = (widths[i + 1], 0)
        return out

    def names(self) -> list[str]:
        return list(self.shapes())

    def copy(self) -> "ParamSet":
        return ParamSet(self.encoder_widths, self.head_widths, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def init_params(encoder_widths, head_widths, seed: int) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    ps = ParamSet(tuple(encoder_widths), tuple(head_widths))
    for name, (rows, cols) in ps.shapes().items():
        if cols:
            limit = np.sqrt(6.0 / (rows + cols))
            ps.arrays[name] = rng.uniform(-limit, limit, size=(rows, cols))
        else:
            ps.arrays[name] = np.zeros(rows)
    return ps


def _mlp(h, tape_params, prefix: str, n_layers: int):
    for i in range(n_layers):
        h = ad.add_bias(ad.matmul(h, tape_params[f"{prefix}.{i}.W"]), tape_params[f"{prefix}.{i}.b"])
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


def forward(params: ParamSet, batch, record_tape: bool = False):
    """Run ``f`` then ``psi``.

    Returns ``(representation, projection)``. With ``record_tape`` both are
    :class:`~lassl.numeric.autodiff.Var` on a fresh tape holding every
    parameter; otherwise they are plain arrays.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"batch shape {x.shape} does not match input width {params.input_dim}")
    if record_tape:
        tape = ad.Tape()
        leaves = {name: tape.param(name, params.arrays[name]) for name in params.names()}
    else:
        leaves = params.arrays
    rep = _mlp(ad.Var(x), leaves, "enc", len(params.encoder_widths) - 1)
    proj = ad.l2_normalize_rows(_mlp(rep, leaves, "head", len(params.head_widths) - 1))
    if record_tape:
        return rep, proj
    return rep.value, proj.value


def encode(params: ParamSet, batch) -> np.ndarray:
    """Representation ``f(x)`` only, no head and no tape."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"batch shape {x.shape} does not match input width {params.input_dim}")
    n = len(params.encoder_widths) - 1
    h = x
    for i in range(n):
        h = h @ params.arrays[f"enc.{i}.W"] + params.arrays[f"enc.{i}.b"]
        if i < n - 1:
            np.maximum(h, 0.0, out=h)
    return h


def backward(loss, seed: float = 1.0) -> dict[str, np.ndarray]:
    """GradientRecord for a scalar loss built from a taped :func:`forward`."""
    return ad.backward(loss, seed)


# ------------------------------------------------------------ binary format


def write_params(params: ParamSet, fh) -> None:
    fh.write(PARAM_MAGIC)
    fh.write(struct.pack("<I", PARAM_VERSION))
    for widths in (params.encoder_widths, params.head_widths):
        fh.write(struct.pack("<I", len(widths)))
        fh.write(struct.pack(f"<{len(widths)}I", *widths))
    for name in params.names():
        fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())


def _read_exact(fh, size: int, what: str) -> bytes:
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError(f"truncated {what}: wanted {size} bytes, got {len(buf)}")
    return buf


def read_params(fh) -> ParamSet:
    magic = _read_exact(fh, 4, "parameter header")
    if magic != PARAM_MAGIC:
        raise FormatError(f"bad parameter magic {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "parameter header"))
    if version != PARAM_VERSION:
        raise VersionMismatchError(f"parameter block version {version}, expected {PARAM_VERSION}")
    widths = []
    for _ in range(2):
        (k,) = struct.unpack("<I", _read_exact(fh, 4, "layer widths"))
        if k < 2 or k > 64:
            raise FormatError(f"implausible layer count {k}")
        widths.append(struct.unpack(f"<{k}I", _read_exact(fh, 4 * k, "layer widths")))
    ps = ParamSet(widths[0], widths[1])
    for name, (rows, cols) in ps.shapes().items():
        shape = (rows, cols) if cols else (rows,)
        count = int(np.prod(shape))
        raw = _read_exact(fh, 8 * count, f"block {name}")
        ps.arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return ps


def save_params(params: ParamSet, path) -> None:
    with open(path, "wb") as fh:
        write_params(params, fh)


def load_params(path) -> ParamSet:
    with open(path, "rb") as fh:
        return read_params(fh)


def params_to_bytes(params: ParamSet) -> bytes:
    buf = io.BytesIO()
    write_params(params, buf)
    return buf.getvalue()
