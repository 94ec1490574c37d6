"""MLP encoder: initialisation, forward/backward passes and checkpoints.

Layer layout for ``depth`` hidden layers::

    h0 = x @ W_in + b_in                       (linear projection f -> d_model)
    h_i = relu(h_{i-1} @ W_i + b_i), i=1..depth
    z  = h_depth @ W_out + b_out                (linear projection d_model -> d_head)

Weights are stored as ``(fan_in, fan_out)`` arrays and applied row-wise.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    DimensionError,
)
from .numerics import matmul


@dataclass(frozen=True)
class MlpConfig:
    input_width: int
    hidden_width: int = 256
    hidden_layers: int = 2
    latent_width: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("input_width", "hidden_width", "latent_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden_layers < 1:
            raise ConfigError("hidden_layers must be >= 1")
        if self.latent_width >= self.hidden_width:
            raise ConfigError("latent_width must be smaller than hidden_width")

    def layer_shapes(self):
        shapes = [(self.input_width, self.hidden_width)]
        shapes += [(self.hidden_width, self.hidden_width)] * self.hidden_layers
        shapes.append((self.hidden_width, self.latent_width))
        return shapes


@dataclass
class MlpParams:
    weights: list
    biases: list

    @property
    def n_layers(self):
        return len(self.weights)

    def arrays(self):
        """Flat ``[W0, b0, W1, b1, ...]`` view used by the optimizer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(weights=list(arrays[0::2]), biases=list(arrays[1::2]))

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype):
        return MlpParams(
            [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases]
        )

    def zeros_like(self):
        return MlpParams(
            [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    @property
    def dtype(self):
        return self.weights[0].dtype


@dataclass
class ForwardCache:
    # inputs[i] is the input to layer i; pre[i] its affine output before any activation
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    shapes: tuple = ()


def init(config):
    """He-uniform weights, zero biases, deterministic in ``config.seed``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed % 2**64)))
    weights, biases = [], []
    for fan_in, fan_out in config.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))
    return MlpParams(weights, biases)


def forward(params, batch):
    """Encode ``batch`` (B x f). Returns ``(latents, cache)``."""
    x = np.asarray(batch)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(
            f"batch width {x.shape[-1]} does not match encoder input {params.weights[0].shape[0]}"
        )
    x = x.astype(params.dtype, copy=False)
    cache = ForwardCache(shapes=tuple(w.shape for w in params.weights))
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        a = matmul(h, w) + b
        cache.pre.append(a)
        h = np.maximum(a, 0) if 0 < i < last else a
    return h, cache


def backward(params, cache, grad_latents):
    """Gradients of ``<grad_latents, forward(params, batch)>`` for every parameter.

    Returned as an ``MlpParams`` holding gradients in the parameter dtype.
    """
    if cache.shapes != tuple(w.shape for w in params.weights) or len(cache.pre) != params.n_layers:
        raise ContractError("forward cache does not belong to these parameters")
    g = np.asarray(grad_latents, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise ContractError(
            f"grad shape {g.shape} does not match latent shape {cache.pre[-1].shape}"
        )
    last = params.n_layers - 1
    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    for i in range(last, -1, -1):
        if 0 < i < last:
            g = g * (cache.pre[i] > 0)
        inp = cache.inputs[i].astype(np.float64, copy=False)
        gw[i] = (inp.T @ g).astype(params.dtype)
        gb[i] = g.sum(axis=0).astype(params.dtype)
        if i > 0:
            g = g @ params.weights[i].astype(np.float64).T
    return MlpParams(gw, gb)


# Checkpoint layout (all little-endian):
#   16-byte header: magic b"CLANCKPT", u16 version, u16 flags, u32 reserved (0)
#   config: 5 x i64 (input_width, hidden_width, hidden_layers, latent_width, seed)
#   u32 tensor count, then per tensor: u32 rows, u32 cols, rows*cols f32
# flags bit 0: two extra tensors (scaler min, scaler max) follow the encoder
# flags bit 1: two extra tensors (head weight, head bias) follow those
MAGIC = b"CLANCKPT"
VERSION = 1
FLAG_SCALER = 1
FLAG_HEAD = 2
_HEADER = struct.Struct("<8sHHI")
_CONFIG = struct.Struct("<5q")


def _write_tensor(fh, arr):
    arr = np.asarray(arr, dtype="<f4")
    rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
    fh.write(struct.pack("<II", rows, cols))
    fh.write(np.ascontiguousarray(arr).tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(f"{self.path}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def tensor(self):
        rows, cols = struct.unpack("<II", self.take(8))
        arr = np.frombuffer(self.take(4 * rows * cols), dtype="<f4").astype(np.float32)
        return arr.reshape(rows, cols)


def write_header(fh, magic, flags=0):
    fh.write(_HEADER.pack(magic, VERSION, flags, 0))


def read_header(reader, magic):
    got_magic, version, flags, _ = reader.unpack(_HEADER)
    if got_magic != magic:
        raise CorruptCheckpointError(f"{reader.path}: bad magic {got_magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(
            f"{reader.path}: format version {version}, this build reads {VERSION}"
        )
    return flags


@dataclass
class Checkpoint:
    params: MlpParams
    config: MlpConfig
    scaler: object = None
    head: object = None


def save_checkpoint(params, config, path, scaler=None, head=None):
    flags = (FLAG_SCALER if scaler is not None else 0) | (FLAG_HEAD if head is not None else 0)
    with open(path, "wb") as fh:
        write_header(fh, MAGIC, flags)
        fh.write(_CONFIG.pack(config.input_width, config.hidden_width, config.hidden_layers,
                              config.latent_width, config.seed))
        tensors = params.arrays()
        if scaler is not None:
            tensors += [scaler.minimum, scaler.maximum]
        if head is not None:
            tensors += [head.weight, head.bias]
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            _write_tensor(fh, t)


def read_checkpoint(path):
    """Load everything stored in a checkpoint file as a ``Checkpoint``."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    flags = read_header(reader, MAGIC)
    f, d_model, depth, d_head, seed = reader.unpack(_CONFIG)
    try:
        config = MlpConfig(f, d_model, depth, d_head, seed)
    except ConfigError as exc:
        raise CorruptCheckpointError(f"{path}: invalid stored config ({exc})") from None
    (count,) = struct.unpack("<I", reader.take(4))
    expected = 2 * (depth + 2) + 2 * bool(flags & FLAG_SCALER) + 2 * bool(flags & FLAG_HEAD)
    if count != expected:
        raise CheckpointShapeError(f"{path}: {count} tensors stored, config implies {expected}")
    tensors = [reader.tensor() for _ in range(count)]
    if reader.pos != len(reader.data):
        raise CorruptCheckpointError(f"{path}: {len(reader.data) - reader.pos} trailing bytes")

    weights, biases = [], []
    for i, shape in enumerate(config.layer_shapes()):
        w, b = tensors[2 * i], tensors[2 * i + 1]
        if w.shape != shape or b.shape != (1, shape[1]):
            raise CheckpointShapeError(f"{path}: layer {i} stored as {w.shape}/{b.shape}, expected {shape}")
        weights.append(w)
        biases.append(b[0])
    rest = tensors[2 * (depth + 2):]
    ckpt = Checkpoint(MlpParams(weights, biases), config)
    if flags & FLAG_SCALER:
        from .pipeline import Scaler
        lo, hi = rest[0], rest[1]
        if lo.shape != (1, f) or hi.shape != (1, f):
            raise CheckpointShapeError(f"{path}: scaler width does not match input width {f}")
        ckpt.scaler = Scaler(lo[0].astype(np.float64), hi[0].astype(np.float64))
        rest = rest[2:]
    if flags & FLAG_HEAD:
        from .trainer import ClassifierHead
        w, b = rest[0], rest[1]
        if w.shape[0] != d_head or b.shape != (1, w.shape[1]):
            raise CheckpointShapeError(f"{path}: head shape {w.shape} incompatible with latent width")
        ckpt.head = ClassifierHead(w, b[0])
    return ckpt


def load_checkpoint(path):
    """Return ``(params, config)`` from a checkpoint file."""
    ckpt = read_checkpoint(path)
    return ckpt.params, ckpt.config
