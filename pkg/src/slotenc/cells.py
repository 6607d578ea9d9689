"""Trainable building blocks: LSTM cells, the composition MLP, parameters.

Components are built in two phases: construct with sizes, then register(ps)
to draw their tensors from a ParameterSet. After registration a component
holds direct references to its tensors, so the free functions lstm_step and
mlp_compose need no parameter argument; the ParameterSet still owns every
tensor by name for the optimizer and for checkpoints.
"""

from __future__ import annotations

import math
import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, InputError, StateError
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    matvec,
    mul,
    narrow,
    relu,
    sigmoid,
    tanh,
    zeros,
)


def glorot_scale(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class ParameterSet:
    """Named trainable tensors plus Adam moment buffers and a step counter.

    Names are unique and shapes immutable after creation. All tensors share
    one dtype fixed at construction; gradient-check models are simply built
    with dtype=float64 from the start.
    """

    def __init__(self, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._tensors: dict[str, Tensor] = {}
        self._decay: set[str] = set()
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step = 0

    def _admit(self, name: str, arr: np.ndarray, decay: bool) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name: {name}")
        if "#" in name:
            raise ConfigError(f"'#' is reserved for checkpoint bookkeeping: {name}")
        t = Tensor(arr.astype(self.dtype, copy=False), requires=True)
        self._tensors[name] = t
        if decay:
            self._decay.add(name)
        return t

    def weight(self, name: str, shape: tuple, fans: tuple | None = None, decay: bool = True) -> Tensor:
        for d in shape:
            if d <= 0:
                raise ConfigError(f"{name}: nonpositive dimension in shape {shape}")
        if fans is None:
            if len(shape) != 2:
                raise ConfigError(f"{name}: fans must be given for shape {shape}")
            fans = (shape[1], shape[0])
        s = glorot_scale(*fans)
        arr = self.rng.uniform(-s, s, size=shape)
        return self._admit(name, arr, decay)

    def bias(self, name: str, size: int, fill: float = 0.0) -> Tensor:
        if size <= 0:
            raise ConfigError(f"{name}: nonpositive size {size}")
        return self._admit(name, np.full(size, fill, dtype=np.float64), decay=False)

    def constant(self, name: str, arr: np.ndarray, decay: bool = False) -> Tensor:
        return self._admit(name, np.asarray(arr, dtype=np.float64), decay)

    def __getitem__(self, name: str) -> Tensor:
        if name not in self._tensors:
            raise InputError(f"unknown parameter: {name}")
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def decays(self, name: str) -> bool:
        return name in self._decay

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())


class LstmCell:
    """Single LSTM layer with fused gate blocks, order: input, forget, candidate, output."""

    def __init__(self, name: str, in_size: int, hidden_size: int):
        if in_size <= 0 or hidden_size <= 0:
            raise ConfigError(f"{name}: sizes must be positive, got {in_size}, {hidden_size}")
        self.name = name
        self.in_size = in_size
        self.hidden_size = hidden_size
        self.wx: Tensor | None = None
        self.wh: Tensor | None = None
        self.b: Tensor | None = None

    def register(self, ps: ParameterSet) -> None:
        h = self.hidden_size
        self.wx = ps.weight(f"{self.name}/wx", (4 * h, self.in_size), fans=(self.in_size, h))
        self.wh = ps.weight(f"{self.name}/wh", (4 * h, h), fans=(h, h))
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0   # forget gate starts open
        self.b = ps.constant(f"{self.name}/b", b)

    def zero_state(self, dtype=None) -> tuple[Tensor, Tensor]:
        dt = dtype if dtype is not None else (self.b.dtype if self.b is not None else DEFAULT_DTYPE)
        return zeros(self.hidden_size, dtype=dt), zeros(self.hidden_size, dtype=dt)

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        if self.wx is None:
            raise StateError(f"{self.name}: cell used before register()")
        h_prev, c_prev = state
        if x.ndim != 1 or x.size != self.in_size:
            raise DimensionError(f"{self.name}: input shape {x.shape}, expected ({self.in_size},)")
        if h_prev.size != self.hidden_size or c_prev.size != self.hidden_size:
            raise DimensionError(
                f"{self.name}: state shapes {h_prev.shape}/{c_prev.shape}, "
                f"expected ({self.hidden_size},)"
            )
        hs = self.hidden_size
        pre = add(add(matvec(self.wx, x), matvec(self.wh, h_prev)), self.b)
        gate_in = sigmoid(narrow(pre, 0, hs))
        gate_forget = sigmoid(narrow(pre, hs, 2 * hs))
        candidate = tanh(narrow(pre, 2 * hs, 3 * hs))
        gate_out = sigmoid(narrow(pre, 3 * hs, 4 * hs))
        c = add(mul(gate_forget, c_prev), mul(gate_in, candidate))
        h = mul(gate_out, tanh(c))
        return h, c


def lstm_step(cell: LstmCell, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    return cell.step(x, state)


class LstmStack:
    """One or more LSTM layers; layer i feeds its hidden state to layer i+1."""

    def __init__(self, name: str, in_size: int, hidden_size: int, layers: int = 1):
        if layers <= 0:
            raise ConfigError(f"{name}: layer count must be positive, got {layers}")
        self.name = name
        self.hidden_size = hidden_size
        self.cells = [
            LstmCell(f"{name}/l{i}", in_size if i == 0 else hidden_size, hidden_size)
            for i in range(layers)
        ]

    def register(self, ps: ParameterSet) -> None:
        for cell in self.cells:
            cell.register(ps)

    def zero_state(self, dtype=None) -> list[tuple[Tensor, Tensor]]:
        return [cell.zero_state(dtype) for cell in self.cells]

    def step(self, x: Tensor, states: list[tuple[Tensor, Tensor]]) -> tuple[Tensor, list]:
        if len(states) != len(self.cells):
            raise DimensionError(
                f"{self.name}: got {len(states)} layer states for {len(self.cells)} layers"
            )
        new_states = []
        inp = x
        for cell, st in zip(self.cells, states):
            h, c = cell.step(inp, st)
            new_states.append((h, c))
            inp = h
        return inp, new_states


class MlpComposer:
    """Maps several fixed-size vectors to one output vector.

    The first layer keeps one weight block per input and sums the block
    products, which is numerically identical to one matrix applied to the
    concatenation; a block of zeros then contributes an exact zero, so an
    unused input can be switched off without disturbing the rest.
    """

    def __init__(self, name: str, in_sizes: Sequence[int], out_size: int, hidden: Sequence[int] = ()):
        in_sizes = tuple(int(s) for s in in_sizes)
        if not in_sizes or any(s <= 0 for s in in_sizes) or out_size <= 0:
            raise ConfigError(f"{name}: bad sizes {in_sizes} -> {out_size}")
        if any(h <= 0 for h in hidden):
            raise ConfigError(f"{name}: bad hidden sizes {tuple(hidden)}")
        self.name = name
        self.in_sizes = in_sizes
        self.out_size = int(out_size)
        self.hidden = tuple(int(h) for h in hidden)
        self.blocks: list[Tensor] = []
        self.block_bias: Tensor | None = None
        self.layers: list[tuple[Tensor, Tensor]] = []

    @property
    def arity(self) -> int:
        return len(self.in_sizes)

    def register(self, ps: ParameterSet) -> None:
        widths = list(self.hidden) + [self.out_size]
        first = widths[0]
        total_in = sum(self.in_sizes)
        self.blocks = [
            ps.weight(f"{self.name}/w0.{i}", (first, size), fans=(total_in, first))
            for i, size in enumerate(self.in_sizes)
        ]
        self.block_bias = ps.bias(f"{self.name}/b0", first)
        self.layers = []
        prev = first
        for i, width in enumerate(widths[1:], start=1):
            w = ps.weight(f"{self.name}/w{i}", (width, prev))
            b = ps.bias(f"{self.name}/b{i}", width)
            self.layers.append((w, b))
            prev = width

    def compose(self, inputs: Sequence[Tensor]) -> Tensor:
        if not self.blocks:
            raise StateError(f"{self.name}: composer used before register()")
        inputs = list(inputs)
        if len(inputs) != self.arity:
            raise ConfigError(
                f"{self.name}: got {len(inputs)} inputs, configured arity is {self.arity}"
            )
        for x, size in zip(inputs, self.in_sizes):
            if x.ndim != 1 or x.size != size:
                raise DimensionError(f"{self.name}: input shape {x.shape}, expected ({size},)")
        acc = matvec(self.blocks[0], inputs[0])
        for w, x in zip(self.blocks[1:], inputs[1:]):
            acc = add(acc, matvec(w, x))
        out = relu(add(acc, self.block_bias))
        for w, b in self.layers:
            out = relu(add(matvec(w, out), b))
        return out


def mlp_compose(m: MlpComposer, inputs: Sequence[Tensor]) -> Tensor:
    return m.compose(inputs)


class Linear:
    """Plain affine map, the workhorse of heads and projections."""

    def __init__(self, name: str, in_size: int, out_size: int):
        if in_size <= 0 or out_size <= 0:
            raise ConfigError(f"{name}: sizes must be positive, got {in_size}, {out_size}")
        self.name = name
        self.in_size = in_size
        self.out_size = out_size
        self.w: Tensor | None = None
        self.b: Tensor | None = None

    def register(self, ps: ParameterSet) -> None:
        self.w = ps.weight(f"{self.name}/w", (self.out_size, self.in_size))
        self.b = ps.bias(f"{self.name}/b", self.out_size)

    def apply(self, x: Tensor) -> Tensor:
        if self.w is None:
            raise StateError(f"{self.name}: layer used before register()")
        if x.ndim != 1 or x.size != self.in_size:
            raise DimensionError(f"{self.name}: input shape {x.shape}, expected ({self.in_size},)")
        return add(matvec(self.w, x), self.b)


def init_params(components: Iterable, seed: int, dtype=DEFAULT_DTYPE) -> ParameterSet:
    """Draw fresh parameters for every component, deterministically per seed."""
    ps = ParameterSet(seed=seed, dtype=dtype)
    for comp in components:
        comp.register(ps)
    return ps


# ---------------------------------------------------------------------------
# checkpoints
#
# Binary layout, all integers little-endian:
#   magic "SENC" | u32 version | u32 record count | records...
# record:
#   u16 name length | name utf-8 | u8 ndim | u32 per dimension | float32 data
# Reserved names carry optimizer state: "<param>#m", "<param>#v" (Adam
# moments) and "#step" (0-d step counter). Round-trips are value-exact
# because parameters are stored in their native float32 bytes.

CHECKPOINT_MAGIC = b"SENC"
CHECKPOINT_VERSION = 1


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(ps: ParameterSet, path) -> None:
    if ps.dtype != np.float32:
        raise ConfigError(f"checkpoints store float32 parameters, set is {ps.dtype}")
    records: list[tuple[str, np.ndarray]] = []
    for name, t in ps.items():
        records.append((name, t.data))
    for name in ps.moment1:
        records.append((f"{name}#m", ps.moment1[name]))
        records.append((f"{name}#v", ps.moment2[name]))
    records.append(("#step", np.asarray(float(ps.step), dtype=np.float32)))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, arr)


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated checkpoint")
    return buf


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Raw record map, including the reserved optimizer entries."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, path))
            name = _read_exact(fh, name_len, path).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, path))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, path))[0] for _ in range(ndim)
            )
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * n, path), dtype="<f4")
            out[name] = data.reshape(shape).astype(np.float32)
        return out


def load_checkpoint(ps: ParameterSet, path) -> None:
    """Fill ps in place; parameter names and shapes must match exactly."""
    records = read_checkpoint(path)
    plain = {k: v for k, v in records.items() if "#" not in k}
    expected = set(ps.names())
    got = set(plain)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise InputError(f"{path}: parameter names differ (missing {missing}, unexpected {extra})")
    for name, arr in plain.items():
        t = ps[name]
        if t.shape != arr.shape:
            raise DimensionError(f"{path}: {name} has shape {arr.shape}, expected {t.shape}")
        t.data[...] = arr.astype(ps.dtype)
        t.grad = None
    ps.moment1.clear()
    ps.moment2.clear()
    for name, arr in records.items():
        if name.endswith("#m") or name.endswith("#v"):
            base = name[:-2]
            if base not in ps:
                raise InputError(f"{path}: optimizer record for unknown parameter {base}")
            if ps[base].shape != arr.shape:
                raise DimensionError(f"{path}: {name} has shape {arr.shape}, expected {ps[base].shape}")
            target = ps.moment1 if name.endswith("#m") else ps.moment2
            target[base] = arr.astype(ps.dtype)
    if "#step" in records:
        ps.step = int(records["#step"])
