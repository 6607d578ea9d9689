"""The slot-memory encoder: read, attend, compose, write, update.

A sequence of k-vectors is encoded against a k x l memory whose column j
starts as token j's embedding. Each step runs the read LSTM, soft-attends
over all slots with a dot-product key, composes the read result with the
LSTM output, runs the write LSTM, and interpolates every slot toward the
written vector in proportion to its key weight. The same key addresses the
read and the write on purpose.

The multi-memory variant attends over any number of auxiliary memories with
their own keys, feeds those reads to a wider composer, and writes the same
output vector back into every memory under its respective key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cells import Linear, LstmStack, MlpComposer, ParameterSet
from .errors import ConfigError, DimensionError, FormatError, InputError, NumericError, StateError
from .tensor import (
    Tensor,
    add,
    dropout,
    matvec,
    mul_cols,
    ones_like,
    outer,
    softmax,
    stack_cols,
    sub,
    vecmat,
)


class Memory:
    """k x l slot matrix; column j holds the evolving vector for token j."""

    def __init__(self, slots: Tensor):
        if slots.ndim != 2:
            raise DimensionError(f"memory needs a matrix of slots, got shape {slots.shape}")
        self.slots = slots

    @property
    def k(self) -> int:
        return self.slots.shape[0]

    @property
    def l(self) -> int:
        return self.slots.shape[1]

    def __repr__(self) -> str:
        return f"Memory(k={self.k}, l={self.l})"


class KeyVector:
    """Soft address over slots: nonnegative weights summing to one."""

    def __init__(self, weights: Tensor):
        if weights.ndim != 1 or weights.size == 0:
            raise DimensionError(f"key vector must be a nonempty vector, got shape {weights.shape}")
        self.weights = weights

    @property
    def size(self) -> int:
        return self.weights.size

    def argmax(self) -> int:
        return int(np.argmax(self.weights.data))


@dataclass
class TraceRecord:
    """One encoding step as seen by the introspection tools.

    `key` and `aux_keys` are detached float64 copies; `step` is 1-based so
    step 0 can mean the untouched initial memory in rendered tables.
    `second` is the best slot once the step's own position is masked out,
    None when the memory has a single slot or the position lies outside it;
    graph rendering uses it for the self-mask rule.
    """

    step: int
    token: str | None
    key: np.ndarray
    argmax: int
    second: int | None = None
    aux_keys: list[np.ndarray] = field(default_factory=list)


def init_memory(embeddings: Sequence[Tensor]) -> Memory:
    """Baby memory: one slot per token, equal to its embedding."""
    embeddings = list(embeddings)
    if not embeddings:
        raise InputError("cannot initialize memory from an empty sequence")
    return Memory(stack_cols(embeddings))


def attend(o: Tensor, mem: Memory) -> tuple[KeyVector, Tensor]:
    """Dot-product key over slots and the key-weighted slot sum."""
    if o.ndim != 1 or o.size != mem.k:
        raise DimensionError(f"query shape {o.shape} does not match memory k={mem.k}")
    z = softmax(vecmat(o, mem.slots))
    read = matvec(mem.slots, z)
    return KeyVector(z), read


def update_memory(mem: Memory, z: KeyVector, h: Tensor) -> Memory:
    """Erase-then-write: slot j moves to (1 - z_j) * slot_j + z_j * h."""
    if z.size != mem.l:
        raise DimensionError(f"key length {z.size} does not match memory l={mem.l}")
    if h.ndim != 1 or h.size != mem.k:
        raise DimensionError(f"write vector shape {h.shape} does not match memory k={mem.k}")
    keep = sub(ones_like(z.weights), z.weights)
    slots = add(mul_cols(mem.slots, keep), outer(h, z.weights))
    return Memory(slots)


@dataclass
class EncoderConfig:
    dim: int                      # k: slot and hidden width
    in_dim: int | None = None     # raw embedding width, projected to dim when different
    read_layers: int = 1
    write_layers: int = 1
    aux: int = 0                  # auxiliary memories consumed per step
    compose_hidden: tuple = ()
    dropout_read: float = 0.0
    dropout_write: float = 0.0

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.aux < 0:
            raise ConfigError(f"aux count must be nonnegative, got {self.aux}")
        if self.in_dim is not None and self.in_dim <= 0:
            raise ConfigError(f"in_dim must be positive, got {self.in_dim}")


@dataclass
class EncoderState:
    """Everything carried across steps; advancing t appends one trace record."""

    arch: "SlotEncoder"
    memory: Memory
    aux: list[Memory]
    read_states: list
    write_states: list
    t: int = 0
    trace: list[TraceRecord] | None = None


class SlotEncoder:
    """Owns the read/compose/write networks for one encoder instance."""

    def __init__(self, name: str, cfg: EncoderConfig):
        self.name = name
        self.cfg = cfg
        d = cfg.dim
        self.project = None
        if cfg.in_dim is not None and cfg.in_dim != d:
            self.project = Linear(f"{name}/in", cfg.in_dim, d)
        self.read = LstmStack(f"{name}/read", d, d, cfg.read_layers)
        self.write = LstmStack(f"{name}/write", d, d, cfg.write_layers)
        arity = 2 + cfg.aux
        self.compose = MlpComposer(f"{name}/compose", (d,) * arity, d, hidden=cfg.compose_hidden)

    def register(self, ps: ParameterSet) -> None:
        if self.project is not None:
            self.project.register(ps)
        self.read.register(ps)
        self.write.register(ps)
        self.compose.register(ps)

    def embed(self, x: Tensor) -> Tensor:
        """Map a raw input vector into slot space (identity without projection)."""
        if self.project is not None:
            return self.project.apply(x)
        if x.ndim != 1 or x.size != self.cfg.dim:
            raise DimensionError(f"{self.name}: input shape {x.shape}, expected ({self.cfg.dim},)")
        return x

    def init_state(
        self,
        memory: Memory,
        aux: Sequence[Memory] = (),
        trace: bool = False,
        dtype=None,
    ) -> EncoderState:
        aux = list(aux)
        if len(aux) != self.cfg.aux:
            raise ConfigError(
                f"{self.name}: configured for {self.cfg.aux} auxiliary memories, got {len(aux)}"
            )
        if memory.k != self.cfg.dim:
            raise DimensionError(f"{self.name}: memory k={memory.k}, expected {self.cfg.dim}")
        for m in aux:
            if m.k != self.cfg.dim:
                raise DimensionError(f"{self.name}: auxiliary memory k={m.k}, expected {self.cfg.dim}")
        dt = dtype if dtype is not None else memory.slots.dtype
        return EncoderState(
            arch=self,
            memory=memory,
            aux=aux,
            read_states=self.read.zero_state(dt),
            write_states=self.write.zero_state(dt),
            t=0,
            trace=[] if trace else None,
        )


def _staged(label: str, t: int, fn):
    try:
        return fn()
    except NumericError as exc:
        raise NumericError(f"step {t}, {label} stage: {exc}") from exc


def _advance(
    state: EncoderState,
    x: Tensor,
    token: str | None,
    rng,
    train: bool,
) -> tuple[EncoderState, Tensor]:
    arch = state.arch
    cfg = arch.cfg
    if x.ndim != 1 or x.size != cfg.dim:
        raise DimensionError(f"{arch.name}: step input shape {x.shape}, expected ({cfg.dim},)")
    t = state.t + 1

    o, read_states = _staged("read", t, lambda: arch.read.step(x, state.read_states))
    o = dropout(o, cfg.dropout_read, rng, train)
    z, read = _staged("attend", t, lambda: attend(o, state.memory))
    aux_pairs = [
        _staged(f"attend-aux{i}", t, lambda m=m: attend(o, m)) for i, m in enumerate(state.aux)
    ]
    compose_in = [o, read] + [pair[1] for pair in aux_pairs]
    c = _staged("compose", t, lambda: arch.compose.compose(compose_in))
    h, write_states = _staged("write", t, lambda: arch.write.step(c, state.write_states))
    h = dropout(h, cfg.dropout_write, rng, train)
    memory = _staged("update", t, lambda: update_memory(state.memory, z, h))
    aux_mem = [
        _staged(f"update-aux{i}", t, lambda m=m, zz=pair[0]: update_memory(m, zz, h))
        for i, (m, pair) in enumerate(zip(state.aux, aux_pairs))
    ]

    trace = state.trace
    if trace is not None:
        zdata = z.weights.data.astype(np.float64)
        self_slot = t - 1
        second = None
        if zdata.size > 1 and 0 <= self_slot < zdata.size:
            masked = zdata.copy()
            masked[self_slot] = -np.inf
            second = int(np.argmax(masked))
        record = TraceRecord(
            step=t,
            token=token,
            key=zdata,
            argmax=z.argmax(),
            second=second,
            aux_keys=[pair[0].weights.data.astype(np.float64) for pair in aux_pairs],
        )
        trace = trace + [record]

    next_state = EncoderState(
        arch=arch,
        memory=memory,
        aux=aux_mem,
        read_states=read_states,
        write_states=write_states,
        t=t,
        trace=trace,
    )
    return next_state, h


def encode_step(
    state: EncoderState,
    x: Tensor,
    params: ParameterSet | None = None,
    token: str | None = None,
    rng=None,
    train: bool = False,
) -> tuple[EncoderState, Tensor]:
    """One plain step: read, attend, compose, write, update the one memory."""
    if state.aux:
        raise ConfigError("state carries auxiliary memories; use encode_step_multi")
    return _advance(state, x, token, rng, train)


def encode_step_multi(
    state: EncoderState,
    x: Tensor,
    params: ParameterSet | None = None,
    token: str | None = None,
    rng=None,
    train: bool = False,
) -> tuple[EncoderState, Tensor]:
    """Multi-memory step: auxiliary memories are read with their own keys and
    updated with the same written vector."""
    if not state.aux:
        raise StateError("no auxiliary memory attached to this state")
    return _advance(state, x, token, rng, train)


@dataclass
class EncodeResult:
    outputs: list[Tensor]           # h_1 .. h_T
    memory: Memory                  # final state of the own memory
    aux: list[Memory]               # final auxiliary memories
    trace: list[TraceRecord] | None
    state: EncoderState

    @property
    def final(self) -> Tensor:
        return self.outputs[-1]


def encode_sequence(
    enc: SlotEncoder,
    vecs: Sequence[Tensor],
    params: ParameterSet | None = None,
    aux: Sequence[Memory] = (),
    trace: bool = False,
    tokens: Sequence[str] | None = None,
    rng=None,
    train: bool = False,
) -> EncodeResult:
    """Initialize memory from the inputs, then advance once per input."""
    vecs = list(vecs)
    if not vecs:
        raise InputError("cannot encode an empty sequence")
    if tokens is not None and len(tokens) != len(vecs):
        raise InputError(f"{len(tokens)} tokens for {len(vecs)} vectors")
    slot_vecs = [enc.embed(v) for v in vecs]
    state = enc.init_state(init_memory(slot_vecs), aux=aux, trace=trace)
    step = encode_step_multi if state.aux else encode_step
    names = list(tokens) if tokens is not None else [f"x{i}" for i in range(len(vecs))]
    outputs = []
    for vec, name in zip(slot_vecs, names):
        state, h = step(state, vec, params, token=name, rng=rng, train=train)
        outputs.append(h)
    return EncodeResult(
        outputs=outputs,
        memory=state.memory,
        aux=state.aux,
        trace=state.trace,
        state=state,
    )


# ---------------------------------------------------------------------------
# trace record wire format
#
# One line per step, tab-separated fields:
#   step <TAB> token <TAB> key weights (space-separated, fixed 6 decimals)
#        <TAB> argmax slot <TAB> one extra field per auxiliary key
# The token field is empty when no token string was supplied.


def format_trace(records: Sequence[TraceRecord]) -> str:
    lines = []
    for r in records:
        token = "" if r.token is None else str(r.token)
        if "\t" in token or "\n" in token:
            raise InputError(f"step {r.step}: token contains tab or newline")
        fields = [
            str(r.step),
            token,
            " ".join(f"{w:.6f}" for w in r.key),
            str(r.argmax),
        ]
        for aux in r.aux_keys:
            fields.append(" ".join(f"{w:.6f}" for w in aux))
        lines.append("\t".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 4:
            raise FormatError(f"trace line {lineno}: expected at least 4 fields, got {len(fields)}")
        try:
            step = int(fields[0])
            key = np.array([float(w) for w in fields[2].split()], dtype=np.float64)
            arg = int(fields[3])
            aux = [
                np.array([float(w) for w in f.split()], dtype=np.float64) for f in fields[4:]
            ]
        except ValueError as exc:
            raise FormatError(f"trace line {lineno}: {exc}") from exc
        token = fields[1] if fields[1] else None
        records.append(TraceRecord(step=step, token=token, key=key, argmax=arg, aux_keys=aux))
    return records
