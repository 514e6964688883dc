"""Fully connected surrogate: spec, parameters, init, evaluation, checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff.jet import value_forward
from .errors import (BadMagicError, CheckpointError, StructuralError,
                     TruncatedCheckpointError, VersionMismatchError)

__all__ = [
    "MU_SCALES",
    "NetworkSpec",
    "MuParam",
    "NetworkParams",
    "TrainerState",
    "init",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
    "mu_physical",
    "mu_raw_for",
]

MAGIC = b"PINNCKPT"
VERSION = 1
END_MARK = b"ENDCKPT\x00"

# Unit of each trainable physical parameter; the stored raw value r maps to
# scale * softplus(r), which is close to scale * r once r exceeds a few units.
MU_SCALES = {
    "absorptivity": 1.0,
    "cp": 1000.0,
    "k": 1.0,
    "h": 1.0,
    "emissivity": 1.0,
}


def mu_physical(name, raw):
    return MU_SCALES[name] * float(np.logaddexp(0.0, raw))


def mu_raw_for(name, value):
    """Inverse of :func:`mu_physical`."""
    if value <= 0:
        raise StructuralError(f"{name} must be positive, got {value}")
    y = value / MU_SCALES[name]
    # softplus^-1(y) = log(expm1(y)), written stably for large y
    return float(y + np.log(-np.expm1(-y)))


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 4
    hidden_layers: tuple = (64, 64, 64)
    hidden_activation: str = "tanh"
    output_activation: str = "softplus"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1:
            raise StructuralError("input_dim must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise StructuralError("all hidden widths must be >= 1")
        if self.hidden_activation != "tanh" or self.output_activation != "softplus":
            raise StructuralError("only tanh hidden / softplus output networks are supported")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_layers, 1)

    @property
    def shapes(self):
        sizes = self.layer_sizes
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]


@dataclass(frozen=True)
class MuParam:
    raw: float
    trainable: bool = True

    def physical(self, name):
        return mu_physical(name, self.raw)


@dataclass(frozen=True)
class NetworkParams:
    weights: tuple
    biases: tuple
    mu: dict = field(default_factory=dict)

    def check(self, spec):
        shapes = spec.shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise StructuralError(
                f"expected {len(shapes)} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        for i, (w, b, s) in enumerate(zip(self.weights, self.biases, shapes)):
            if w.shape != s or b.shape != (s[0],):
                raise StructuralError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {s}")

    @property
    def n_theta(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def mu_names(self):
        return sorted(self.mu)

    def flatten(self):
        """Parameter vector: every layer (weights row-major, then bias), then mu raw values by name."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        parts.append(np.array([self.mu[n].raw for n in self.mu_names], dtype=np.float64))
        return np.concatenate(parts)

    def unflatten(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_theta + len(self.mu):
            raise StructuralError("parameter vector length mismatch")
        ws, bs = [], []
        off = 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[off:off + w.size].reshape(w.shape).copy())
            off += w.size
            bs.append(vec[off:off + b.size].copy())
            off += b.size
        mu = {n: replace(self.mu[n], raw=float(vec[off + i])) for i, n in enumerate(self.mu_names)}
        return NetworkParams(tuple(ws), tuple(bs), mu)

    def trainable_mask(self):
        mask = np.ones(self.n_theta + len(self.mu), dtype=bool)
        for i, n in enumerate(self.mu_names):
            mask[self.n_theta + i] = self.mu[n].trainable
        return mask

    def mu_values(self):
        return {n: self.mu[n].physical(n) for n in self.mu_names}

    def with_mu(self, mu):
        return NetworkParams(self.weights, self.biases, dict(mu))


@dataclass
class TrainerState:
    epoch: int = 0
    adam_step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


def init(spec, mu=None):
    """Glorot-uniform weights, zero biases, reproducible from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    ws, bs = [], []
    for fan_out, fan_in in spec.shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return NetworkParams(tuple(ws), tuple(bs), dict(mu or {}))


def forward(params, scaled_points):
    """Normalized temperature u = softplus(...) > 0 at each scaled input row."""
    x = np.atleast_2d(np.asarray(scaled_points, dtype=np.float64))
    return value_forward(params.weights, params.biases, x)[:, 0]


# --------------------------------------------------------------------------
# checkpoint format, all little-endian:
#   magic "PINNCKPT" | u32 version
#   u32 input_dim | u32 n_hidden | n_hidden * u32 widths
#   u32 len + utf8 hidden activation | u32 len + utf8 output activation | u64 seed
#   per layer: u32 rows | u32 cols | rows*cols f64 weights (row-major) | rows f64 bias
#   u32 n_mu | per mu: u32 name length | utf8 name | f64 raw value | u8 trainable
#   u8 has_adam | [u64 adam step | u64 n | n f64 m | n f64 v]
#   u64 epoch | u32 len + utf8 JSON metadata | "ENDCKPT\0"


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(params, spec, trainer_state, path):
    params.check(spec)
    state = trainer_state or TrainerState()
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<II", spec.input_dim, len(spec.hidden_layers))
    out += struct.pack(f"<{len(spec.hidden_layers)}I", *spec.hidden_layers)
    out += _pack_str(spec.hidden_activation) + _pack_str(spec.output_activation)
    out += struct.pack("<Q", spec.seed & 0xFFFFFFFFFFFFFFFF)
    for w, b in zip(params.weights, params.biases):
        out += struct.pack("<II", *w.shape)
        out += np.ascontiguousarray(w, dtype="<f8").tobytes()
        out += np.ascontiguousarray(b, dtype="<f8").tobytes()
    out += struct.pack("<I", len(params.mu))
    for name in params.mu_names:
        entry = params.mu[name]
        out += _pack_str(name) + struct.pack("<dB", entry.raw, 1 if entry.trainable else 0)
    if state.m is not None and state.v is not None:
        m = np.ascontiguousarray(state.m, dtype="<f8")
        v = np.ascontiguousarray(state.v, dtype="<f8")
        out += struct.pack("<BQQ", 1, state.adam_step, m.size) + m.tobytes() + v.tobytes()
    else:
        out += struct.pack("<B", 0)
    out += struct.pack("<Q", state.epoch)
    out += _pack_str(json.dumps(state.metadata, sort_keys=True))
    out += END_MARK
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"bad string in checkpoint: {exc}") from None

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def load_checkpoint(path):
    """Returns ``(params, spec, trainer_state)``; raises on any structural defect."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    input_dim, n_hidden = r.unpack("<II")
    if n_hidden > 10_000:
        raise CheckpointError("implausible layer count")
    widths = r.unpack(f"<{n_hidden}I") if n_hidden else ()
    hidden_act = r.string()
    out_act = r.string()
    (seed,) = r.unpack("<Q")
    try:
        spec = NetworkSpec(input_dim, tuple(widths), hidden_act, out_act, seed)
    except StructuralError as exc:
        raise CheckpointError(f"invalid network spec in checkpoint: {exc}") from None
    ws, bs = [], []
    for rows_exp, cols_exp in spec.shapes:
        rows, cols = r.unpack("<II")
        if (rows, cols) != (rows_exp, cols_exp):
            raise CheckpointError(f"shape table mismatch: {rows}x{cols}, expected {rows_exp}x{cols_exp}")
        ws.append(r.floats(rows * cols).reshape(rows, cols))
        bs.append(r.floats(rows))
    (n_mu,) = r.unpack("<I")
    mu = {}
    for _ in range(n_mu):
        name = r.string()
        raw, flag = r.unpack("<dB")
        if name not in MU_SCALES:
            raise CheckpointError(f"unknown physical parameter {name!r}")
        mu[name] = MuParam(raw, bool(flag))
    state = TrainerState()
    (has_adam,) = r.unpack("<B")
    if has_adam:
        step, n = r.unpack("<QQ")
        state.adam_step = step
        state.m = r.floats(n)
        state.v = r.floats(n)
    (state.epoch,) = r.unpack("<Q")
    try:
        state.metadata = json.loads(r.string())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"bad metadata block: {exc}") from None
    if r.take(len(END_MARK)) != END_MARK:
        raise CheckpointError("missing end marker")
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after end marker")
    params = NetworkParams(tuple(ws), tuple(bs), mu)
    return params, spec, state
