"""Reverse-mode automatic differentiation over small dense tensors.

Everything downstream (cells, encoder, heads, losses) is expressed with 0-,
1- and 2-d float arrays, so instead of pulling in a framework this module
records plain numpy ops on a tape and replays hand-written backward rules in
exact reverse order. Gradients accumulate additively into `.grad`; zeroing
between optimizer steps is the caller's job.

Precision policy: float32 for training, float64 for gradient checking.
Binary ops refuse mixed dtypes so a stray float64 cannot silently slow a
training run or a stray float32 wreck a finite-difference check.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError, TapeError

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A numpy array plus a gradient slot and an identity on the current tape.

    `requires` marks trainable leaves; results of recorded ops inherit it.
    `grad` is lazily allocated on first accumulation and always matches
    `data` in shape and dtype.
    """

    __slots__ = ("data", "grad", "requires", "node", "tape_id")

    def __init__(self, data, requires: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 2:
            raise DimensionError(f"tensors are at most 2-d, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires = requires
        self.node = -1      # node id on the tape identified by tape_id
        self.tape_id = -1

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.ndim != 0:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires={self.requires})"


def tensor(data, requires: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires=requires, dtype=dtype)


def zeros(shape, dtype=DEFAULT_DTYPE, requires: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires=requires)


def ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones_like(t.data))


class TapeRecord(NamedTuple):
    name: str
    in_nodes: tuple
    out_node: int
    rule: Callable[[], None]


class Tape:
    """Ordered log of differentiable ops, activated as a context manager.

    Node ids are tape-local and assigned on first touch, so inputs always
    carry smaller ids than the op that consumes them (topological order).
    A tape belongs to one worker; nothing here is thread-safe by design.
    """

    _ids = itertools.count(1)

    def __init__(self):
        self.id = next(Tape._ids)
        self._records: list[TapeRecord] = []
        self._next_node = 0

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        top = _STACK.pop()
        if top is not self:
            raise TapeError("tape context exited out of order")

    def _admit(self, t: Tensor) -> int:
        if t.tape_id != self.id:
            t.tape_id = self.id
            t.node = self._next_node
            self._next_node += 1
        return t.node

    def record(self, name: str, out: Tensor, inputs: Sequence[Tensor], rule: Callable[[], None]) -> None:
        in_nodes = tuple(self._admit(x) for x in inputs)
        out_node = self._admit(out)
        self._records.append(TapeRecord(name, in_nodes, out_node, rule))

    @property
    def records(self) -> list[TapeRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)


_STACK: list[Tape | None] = []


def active_tape() -> Tape | None:
    if _STACK and _STACK[-1] is not None:
        return _STACK[-1]
    return None


@contextmanager
def no_grad():
    """Forward-only region: ops compute values but record nothing."""
    _STACK.append(None)
    try:
        yield
    finally:
        _STACK.pop()


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite values in forward result")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def record_op(name: str, out: Tensor, inputs: Sequence[Tensor], rule: Callable[[], None]) -> Tensor:
    """Finish an op: guard the forward value, record if anything needs grad.

    Other modules use this to define fused ops (losses) without touching
    tape internals. `rule` must read out.grad and _accumulate into inputs.
    """
    _check_finite(name, out.data)
    tape = active_tape()
    if tape is not None and any(x.requires for x in inputs):
        out.requires = True
        tape.record(name, out, inputs, rule)
    return out


accumulate = _accumulate   # for fused-op backward rules defined elsewhere


def backward(root: Tensor) -> None:
    """Populate grads of every tensor the scalar root depends on."""
    tape = active_tape()
    if tape is None:
        raise TapeError("backward needs an active tape")
    if root.data.ndim != 0:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if root.tape_id != tape.id or not root.requires:
        raise TapeError("root was not produced on the active tape")
    root.grad = np.ones_like(root.data)
    for rec in reversed(tape._records):
        rec.rule()


def _binary_guard(name: str, a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{name}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    _binary_guard(name, a, b)
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g)
        _accumulate(b, g)

    return record_op("add", out, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g)
        _accumulate(b, -g)

    return record_op("sub", out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return record_op("mul", out, (a, b), rule)


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, -g)

    return record_op("neg", out, (x,), rule)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * np.asarray(c, dtype=x.data.dtype))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * c)

    return record_op("scale", out, (x,), rule)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _binary_guard("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return record_op("matmul", out, (a, b), rule)


def matvec(m: Tensor, v: Tensor) -> Tensor:
    _binary_guard("matvec", m, v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: cannot multiply shapes {m.shape} and {v.shape}")
    out = Tensor(m.data @ v.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(m, np.outer(g, v.data))
        _accumulate(v, m.data.T @ g)

    return record_op("matvec", out, (m, v), rule)


def vecmat(v: Tensor, m: Tensor) -> Tensor:
    _binary_guard("vecmat", v, m)
    if v.ndim != 1 or m.ndim != 2 or v.shape[0] != m.shape[0]:
        raise DimensionError(f"vecmat: cannot multiply shapes {v.shape} and {m.shape}")
    out = Tensor(v.data @ m.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(v, m.data @ g)
        _accumulate(m, np.outer(v.data, g))

    return record_op("vecmat", out, (v, m), rule)


def outer(u: Tensor, v: Tensor) -> Tensor:
    _binary_guard("outer", u, v)
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionError(f"outer: needs two vectors, got shapes {u.shape} and {v.shape}")
    out = Tensor(np.outer(u.data, v.data))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(u, g @ v.data)
        _accumulate(v, g.T @ u.data)

    return record_op("outer", out, (u, v), rule)


def mul_cols(m: Tensor, w: Tensor) -> Tensor:
    """Column broadcast: scale column j of m by w[j]."""
    _binary_guard("mul_cols", m, w)
    if m.ndim != 2 or w.ndim != 1 or m.shape[1] != w.shape[0]:
        raise DimensionError(f"mul_cols: shapes {m.shape} and {w.shape} do not align")
    out = Tensor(m.data * w.data[None, :])

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(m, g * w.data[None, :])
        _accumulate(w, (g * m.data).sum(axis=0))

    return record_op("mul_cols", out, (m, w), rule)


def add_rows(m: Tensor, v: Tensor) -> Tensor:
    """Row broadcast: add v to every row of m."""
    _binary_guard("add_rows", m, v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rows: shapes {m.shape} and {v.shape} do not align")
    out = Tensor(m.data + v.data[None, :])

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(m, g)
        _accumulate(v, g.sum(axis=0))

    return record_op("add_rows", out, (m, v), rule)


# ---------------------------------------------------------------------------
# shape plumbing


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat: no inputs")
    for p in parts:
        if p.ndim != 1:
            raise DimensionError(f"concat: needs vectors, got shape {p.shape}")
        _binary_guard("concat", parts[0], p)
    out = Tensor(np.concatenate([p.data for p in parts]))
    offsets = np.cumsum([0] + [p.size for p in parts])

    def rule():
        g = out.grad
        if g is None:
            return
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi])

    return record_op("concat", out, tuple(parts), rule)


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 1:
        raise DimensionError(f"narrow: needs a vector, got shape {x.shape}")
    if not (0 <= start < stop <= x.size):
        raise DimensionError(f"narrow: range [{start}:{stop}) outside length {x.size}")
    out = Tensor(x.data[start:stop].copy())

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[start:stop] += g

    return record_op("narrow", out, (x,), rule)


def pick(x: Tensor, i: int) -> Tensor:
    if x.ndim != 1:
        raise DimensionError(f"pick: needs a vector, got shape {x.shape}")
    if not (0 <= i < x.size):
        raise DimensionError(f"pick: index {i} outside length {x.size}")
    out = Tensor(x.data[i].copy())

    def rule():
        g = out.grad
        if g is None:
            return
        if x.requires:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[i] += g

    return record_op("pick", out, (x,), rule)


def take_row(m: Tensor, i: int) -> Tensor:
    if m.ndim != 2:
        raise DimensionError(f"take_row: needs a matrix, got shape {m.shape}")
    if not (0 <= i < m.shape[0]):
        raise DimensionError(f"take_row: row {i} outside {m.shape[0]} rows")
    out = Tensor(m.data[i].copy())

    def rule():
        g = out.grad
        if g is None:
            return
        if m.requires:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            m.grad[i] += g

    return record_op("take_row", out, (m,), rule)


def stack_cols(cols: Sequence[Tensor]) -> Tensor:
    cols = list(cols)
    if not cols:
        raise DimensionError("stack_cols: no inputs")
    n = cols[0].size
    for c in cols:
        if c.ndim != 1 or c.size != n:
            raise DimensionError(
                f"stack_cols: ragged inputs, {c.shape} does not match ({n},)"
            )
        _binary_guard("stack_cols", cols[0], c)
    out = Tensor(np.stack([c.data for c in cols], axis=1))

    def rule():
        g = out.grad
        if g is None:
            return
        for j, c in enumerate(cols):
            _accumulate(c, g[:, j])

    return record_op("stack_cols", out, tuple(cols), rule)


# ---------------------------------------------------------------------------
# reductions and nonlinearities


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, np.full_like(x.data, g))

    return record_op("sum_all", out, (x,), rule)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    if n == 0:
        raise DimensionError("mean: empty input")
    out = Tensor(x.data.mean())

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, np.full_like(x.data, g / n))

    return record_op("mean", out, (x,), rule)


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * (1.0 - out.data * out.data))

    return record_op("tanh", out, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s.astype(d.dtype, copy=False))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * out.data * (1.0 - out.data))

    return record_op("sigmoid", out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * (x.data > 0))

    return record_op("relu", out, (x,), rule)


def absval(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * np.sign(x.data))

    return record_op("absval", out, (x,), rule)


def log(x: Tensor) -> Tensor:
    # log(0) -> -inf and log(neg) -> nan both trip the finite guard
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(x.data))

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g / x.data)

    return record_op("log", out, (x,), rule)


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * 2.0 * x.data)

    return record_op("square", out, (x,), rule)


def softmax(v: Tensor) -> Tensor:
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"softmax: needs a nonempty vector, got shape {v.shape}")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    out = Tensor(e / e.sum())

    def rule():
        g = out.grad
        if g is None:
            return
        # Jacobian-vector product: z * (g - <g, z>)
        z = out.data
        _accumulate(v, z * (g - np.dot(g, z)))

    return record_op("softmax", out, (v,), rule)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: keep-mask scaled by 1/keep at train time, identity at eval."""
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout at train time needs a random generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / np.asarray(keep, dtype=x.data.dtype)
    out = Tensor(x.data * mask)

    def rule():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * mask)

    return record_op("dropout", out, (x,), rule)


# ---------------------------------------------------------------------------
# gradient checking


def _eval_scalar(f, params, label: str) -> float:
    with no_grad():
        try:
            out = f(params)
        except NumericError as exc:
            raise NumericError(f"non-finite evaluation while perturbing {label}: {exc}") from exc
    if out.data.ndim != 0:
        raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
    return float(out.data)


def grad_check(f, params, eps: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference gradients.

    f maps a ParameterSet (any name->Tensor mapping with items()/zero_grads())
    to a scalar Tensor. Runs strictly at float64; relative error per scalar
    parameter is |a-n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ContractError(f"grad_check: eps must be positive, got {eps}")
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise ContractError(f"grad_check: parameter {name} is {t.data.dtype}, needs float64")
    params.zero_grads()
    with Tape():
        out = f(params)
        if out.data.ndim != 0:
            raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
        backward(out)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    params.zero_grads()

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            hi = _eval_scalar(f, params, f"{name}[{i}]")
            flat[i] = saved - eps
            lo = _eval_scalar(f, params, f"{name}[{i}]")
            flat[i] = saved
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(a[i] - numeric) / max(abs(a[i]), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
