"""The 9-layer CNN family: construction, prediction, input gradients, checkpoints.

Every model is 4 conv layers (3x3, valid, stride 1), 2 max-pool layers and
3 dense layers, the classic small stack for 10-class image benchmarks. Two
width presets exist: ``paper`` (full-scale widths) and ``desk`` (narrow,
for fast end-to-end runs).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor

CHECKPOINT_MAGIC = b"DDTA"
CHECKPOINT_VERSION = 1

_PRESET_WIDTHS = {
    # preset -> dataset -> (conv channels, dense widths)
    "paper": {
        "mnist": ((32, 32, 64, 64), (200, 200)),
        "cifar10": ((64, 64, 128, 128), (256, 256)),
    },
    "desk": {
        "mnist": ((8, 8, 16, 16), (64, 64)),
        "cifar10": ((8, 8, 16, 16), (64, 64)),
    },
}

_INPUT_SHAPES = {"mnist": (28, 28, 1), "cifar10": (32, 32, 3)}


class InvalidSpec(ValueError):
    """Architecture description violates the layer-count or shape contract."""


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape description: input, 4 conv channel counts, 2 hidden dense widths."""

    input_shape: tuple[int, int, int]
    conv_channels: tuple[int, int, int, int]
    dense_widths: tuple[int, int]
    n_classes: int = 10
    preset: str = "custom"

    def __post_init__(self):
        if len(self.input_shape) != 3 or any(d <= 0 for d in self.input_shape):
            raise InvalidSpec(f"bad input shape {self.input_shape}")
        if len(self.conv_channels) != 4 or any(c <= 0 for c in self.conv_channels):
            raise InvalidSpec("exactly 4 conv layers with positive widths required")
        if len(self.dense_widths) != 2 or any(d <= 0 for d in self.dense_widths):
            raise InvalidSpec("exactly 2 hidden dense layers with positive widths required")
        if self.n_classes < 2:
            raise InvalidSpec(f"need at least 2 classes, got {self.n_classes}")
        self.conv_output_shape()  # rejects inputs too small for the stack

    @classmethod
    def for_dataset(cls, dataset: str, preset: str = "desk") -> "ArchitectureSpec":
        if preset not in _PRESET_WIDTHS:
            raise InvalidSpec(f"unknown preset {preset!r}")
        if dataset not in _INPUT_SHAPES:
            raise InvalidSpec(f"unknown dataset {dataset!r}")
        conv, dense = _PRESET_WIDTHS[preset][dataset]
        return cls(_INPUT_SHAPES[dataset], conv, dense, 10, preset)

    def conv_output_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.input_shape
        for block in (0, 1):
            h, w = h - 4, w - 4
            if h <= 0 or w <= 0 or h % 2 or w % 2:
                raise InvalidSpec(
                    f"input {self.input_shape} does not fit the conv/pool stack")
            h, w = h // 2, w // 2
        return h, w, self.conv_channels[3]

    def parameter_shapes(self) -> list[tuple[int, ...]]:
        """Weight/bias shapes in forward order."""
        shapes: list[tuple[int, ...]] = []
        cin = self.input_shape[2]
        for cout in self.conv_channels:
            shapes.append((3, 3, cin, cout))
            shapes.append((cout,))
            cin = cout
        h, w, c = self.conv_output_shape()
        width_in = h * w * c
        for width_out in (*self.dense_widths, self.n_classes):
            shapes.append((width_in, width_out))
            shapes.append((width_out,))
            width_in = width_out
        return shapes

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.parameter_shapes())


PROVENANCE_TEACHER = "teacher"
PROVENANCE_ASSISTANT = "assistant"
PROVENANCE_STUDENT = "student"


def chain_provenance(step: int, chain_length: int) -> str:
    """Naming for position ``step`` (1-based) in a chain of ``chain_length``."""
    if step == 1:
        return PROVENANCE_TEACHER
    if step == chain_length:
        return PROVENANCE_STUDENT
    if step == 2 and chain_length == 3:
        return PROVENANCE_ASSISTANT
    return f"chain-step {step}"


def _provenance_byte(p: str) -> int:
    if p == PROVENANCE_TEACHER:
        return 0
    if p == PROVENANCE_ASSISTANT:
        return 1
    if p == PROVENANCE_STUDENT:
        return 2
    if p.startswith("chain-step "):
        return 3 + int(p.split()[-1])
    raise ValueError(f"unknown provenance {p!r}")


def _provenance_name(b: int) -> str:
    if b == 0:
        return PROVENANCE_TEACHER
    if b == 1:
        return PROVENANCE_ASSISTANT
    if b == 2:
        return PROVENANCE_STUDENT
    return f"chain-step {b - 3}"


@dataclass
class TrainedModel:
    """Layer stack parameters plus the temperature they were trained at."""

    spec: ArchitectureSpec
    params: list[Tensor]
    temperature: float = 1.0
    provenance: str = PROVENANCE_TEACHER
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    @property
    def model_id(self) -> str:
        return f"{self.provenance.replace(' ', '')}_T{self.temperature:g}_s{self.seed}"

    def build_logits(self, tape: Tape, x: Tensor, train: bool = False,
                     dropout_rate: float = 0.0,
                     rng: np.random.Generator | None = None) -> Tensor:
        """Append the full forward pass for batch ``x`` (B,H,W,C) to ``tape``."""
        expected = self.spec.input_shape
        if x.data.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise T.ShapeMismatch(
                f"model input: expected (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {x.shape}")
        p = self.params
        h = x
        pi = 0
        for ci in range(4):
            h = T.conv2d(tape, h, p[pi], p[pi + 1])
            h = T.relu(tape, h)
            pi += 2
            if ci in (1, 3):
                h = T.maxpool2(tape, h)
        b = x.shape[0]
        h = T.reshape(tape, h, (b, h.size // b))
        for di in range(2):
            h = T.matmul(tape, h, p[pi])
            h = T.add(tape, h, p[pi + 1])
            h = T.relu(tape, h)
            pi += 2
            if train and dropout_rate > 0.0:
                if rng is None:
                    raise ValueError("training forward pass with dropout needs an rng")
                h = T.dropout(tape, h, dropout_rate, rng)
        h = T.matmul(tape, h, p[pi])
        h = T.add(tape, h, p[pi + 1])
        return h


def build_model(spec: ArchitectureSpec, seed: int) -> TrainedModel:
    """Fresh model with fan-in-scaled uniform weights and zero biases.

    Identical (spec, seed) pairs give bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    params: list[Tensor] = []
    for shape in spec.parameter_shapes():
        if len(shape) == 1:
            data = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-limit, limit, size=shape).astype(np.float32)
        params.append(Tensor(data, requires_grad=True))
    return TrainedModel(spec=spec, params=params, seed=seed)


def logits(model: TrainedModel, batch: np.ndarray) -> np.ndarray:
    """Raw pre-softmax outputs for a batch (no temperature involved)."""
    out = []
    for chunk in _chunks(np.asarray(batch, dtype=np.float32), 256):
        tape = Tape()
        out.append(model.build_logits(tape, Tensor(chunk)).data)
    return np.concatenate(out, axis=0)


def predict(model: TrainedModel, batch: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Probability rows softmax(logits / temperature); each row sums to 1."""
    out = []
    for chunk in _chunks(np.asarray(batch, dtype=np.float32), 256):
        tape = Tape()
        z = model.build_logits(tape, Tensor(chunk))
        out.append(T.softmax_t(tape, z, temperature).data)
    return np.concatenate(out, axis=0)


def _chunks(batch: np.ndarray, size: int):
    for i in range(0, len(batch), size):
        yield batch[i:i + size]


def input_gradient(model: TrainedModel, x: np.ndarray,
                   scalar_head: Callable[[Tape, Tensor], Tensor],
                   temperature: float | None = 1.0) -> np.ndarray:
    """Gradient of scalar_head(output) with respect to a single input sample.

    With a temperature the head sees the probability vector; with
    ``temperature=None`` it sees the raw logits.
    """
    xt = Tensor(np.asarray(x, dtype=np.float64 if np.asarray(x).dtype == np.float64
                           else np.float32)[None, ...], requires_grad=True)
    tape = Tape()
    z = model.build_logits(tape, xt)
    head_in = T.softmax_t(tape, z, temperature) if temperature is not None else z
    seed = scalar_head(tape, head_in)
    if not isinstance(seed, Tensor) or seed.size != 1:
        raise T.GraphError("scalar_head must return a scalar tensor on the tape")
    T.backward(tape, seed)
    if xt.grad is None:
        return np.zeros_like(xt.data[0])
    return xt.grad[0]


def jacobian_probs(model: TrainedModel, batch: np.ndarray,
                   temperature: float) -> np.ndarray:
    """Full output-probability Jacobian for each sample: (B, N, H, W, C).

    One forward pass per batch, one backward sweep per class; samples are
    independent, so the batched sweep recovers every per-sample gradient.
    """
    xb = Tensor(np.asarray(batch, dtype=np.float32), requires_grad=True)
    n = model.n_classes
    b = xb.shape[0]
    tape = Tape()
    z = model.build_logits(tape, xb)
    probs = T.softmax_t(tape, z, temperature)
    jac = np.empty((b, n) + tuple(xb.shape[1:]), dtype=np.float32)
    for i in range(n):
        col = T.gather(tape, probs, i + n * np.arange(b))
        seed = T.sum_all(tape, col)
        T.backward(tape, seed)
        jac[:, i] = xb.grad
    return jac


# ---------------------------------------------------------------------------
# checkpoint I/O


class CheckpointError(Exception):
    """Base for unreadable or inconsistent checkpoint files."""


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class ShapeDisagreement(CheckpointError):
    pass


def save_checkpoint(model: TrainedModel, path) -> None:
    """Bit-exact binary serialization of a trained model."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<f", model.temperature))
        f.write(struct.pack("<B", _provenance_byte(model.provenance)))
        f.write(struct.pack("<Q", model.seed))
        spec = model.spec
        dims = [*spec.input_shape, *spec.conv_channels, *spec.dense_widths,
                spec.n_classes, _preset_code(spec.preset)]
        f.write(struct.pack("<I", len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(struct.pack("<I", len(model.params)))
        for p in model.params:
            f.write(struct.pack("<B", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4:
            raise TruncatedCheckpoint("file shorter than the magic header")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        version = _read_struct(f, "<I")[0]
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"unsupported checkpoint version {version}")
        temperature = _read_struct(f, "<f")[0]
        provenance = _provenance_name(_read_struct(f, "<B")[0])
        seed = _read_struct(f, "<Q")[0]
        n_dims = _read_struct(f, "<I")[0]
        if n_dims != 11:
            raise ShapeDisagreement(f"expected 11 spec dims, found {n_dims}")
        dims = _read_struct(f, f"<{n_dims}I")
        spec = ArchitectureSpec(
            input_shape=tuple(dims[0:3]),
            conv_channels=tuple(dims[3:7]),
            dense_widths=tuple(dims[7:9]),
            n_classes=dims[9],
            preset=_preset_name(dims[10]),
        )
        n_params = _read_struct(f, "<I")[0]
        expected = spec.parameter_shapes()
        if n_params != len(expected):
            raise ShapeDisagreement(
                f"expected {len(expected)} parameter tensors, found {n_params}")
        params = []
        for shape_expected in expected:
            rank = _read_struct(f, "<B")[0]
            shape = _read_struct(f, f"<{rank}I")
            if tuple(shape) != tuple(shape_expected):
                raise ShapeDisagreement(
                    f"parameter shape {tuple(shape)} disagrees with spec "
                    f"shape {tuple(shape_expected)}")
            n_bytes = int(np.prod(shape)) * 4
            raw = f.read(n_bytes)
            if len(raw) < n_bytes:
                raise TruncatedCheckpoint("parameter data ends early")
            params.append(Tensor(np.frombuffer(raw, dtype="<f4").reshape(shape).copy(),
                                 requires_grad=True))
    return TrainedModel(spec=spec, params=params, temperature=temperature,
                        provenance=provenance, seed=seed)


def _read_struct(f: BinaryIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = f.read(size)
    if len(raw) < size:
        raise TruncatedCheckpoint(f"file ends inside a {fmt} field")
    return struct.unpack(fmt, raw)


_PRESETS = ["custom", "paper", "desk"]


def _preset_code(name: str) -> int:
    return _PRESETS.index(name) if name in _PRESETS else 0


def _preset_name(code: int) -> str:
    return _PRESETS[code] if 0 <= code < len(_PRESETS) else "custom"
