"""Optimization loop: Adam with bias correction, cross-entropy losses,
L2 weight decay, length-bucketed batching, and per-epoch CSV metrics.

A trainable task is any object with a `params` ParameterSet, a
`batch_loss(batch, rng, train) -> (mean loss Tensor, correct count)` and an
`evaluate(items) -> (loss, accuracy)`; an optional `bucket_key(item)`
overrides the length-based bucketing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cells import ParameterSet
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    InputError,
    NumericError,
)
from .tensor import Tape, Tensor, accumulate, backward, record_op

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "dev_loss", "dev_acc")


# ---------------------------------------------------------------------------
# optimizer


def adam_update(
    ps: ParameterSet,
    grads: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam step over every parameter, in place.

    `grads` maps parameter names to gradient arrays; a missing name means a
    zero gradient for this step. Moment buffers and the shared step counter
    live on the ParameterSet.
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    for name in grads:
        if name not in ps:
            raise InputError(f"gradient for unknown parameter: {name}")

    ps.step += 1
    t = ps.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in ps.items():
        g = grads.get(name)
        if g is None:
            if name not in ps.moment1:
                continue  # nothing accumulated yet, step is exactly zero
            g = 0.0
        else:
            g = np.asarray(g)
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"{name}: gradient shape {g.shape} does not match {p.data.shape}"
                )
            if not np.isfinite(g).all():
                raise NumericError(f"{name}: non-finite gradient")
        if name not in ps.moment1:
            ps.moment1[name] = np.zeros_like(p.data)
            ps.moment2[name] = np.zeros_like(p.data)
        m, v = ps.moment1[name], ps.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def grads_from(ps: ParameterSet) -> dict:
    """Collect accumulated gradients by name; parameters without one are omitted."""
    return {name: t.grad for name, t in ps.items() if t.grad is not None}


# ---------------------------------------------------------------------------
# losses


def loss_xent_softmax(logits: Tensor, gold: int) -> Tensor:
    """Cross entropy of a softmax over `logits` against the gold index,
    fused for stability (log-sum-exp, no intermediate distribution node)."""
    if logits.ndim != 1 or logits.size == 0:
        raise DimensionError(f"logits must be a nonempty vector, got shape {logits.shape}")
    gold = int(gold)
    if not (0 <= gold < logits.size):
        raise InputError(f"gold index {gold} out of range for {logits.size} classes")
    x = logits.data
    m = float(x.max())
    lse = m + np.log(np.exp(x - m).sum())
    out = Tensor(np.asarray(lse - x[gold], dtype=x.dtype))
    probs = np.exp(x - lse)

    def rule():
        g = float(out.grad)
        gx = probs * g
        gx[gold] -= g
        accumulate(logits, gx.astype(x.dtype, copy=False))

    return record_op("xent_softmax", out, [logits], rule)


def loss_xent_sigmoid(p: Tensor, gold: int) -> Tensor:
    """Cross entropy of a Bernoulli probability against gold in {0, 1}."""
    if p.ndim != 0:
        raise DimensionError(f"probability must be a scalar, got shape {p.shape}")
    if gold not in (0, 1):
        raise InputError(f"gold label must be 0 or 1, got {gold!r}")
    val = float(p.data)
    q = val if gold == 1 else 1.0 - val
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.asarray(-np.log(q), dtype=p.data.dtype))

    def rule():
        g = float(out.grad)
        d = -1.0 / q if gold == 1 else 1.0 / q
        accumulate(p, np.asarray(d * g, dtype=p.data.dtype))

    return record_op("xent_sigmoid", out, [p], rule)


def l2_penalty(ps: ParameterSet, lam: float) -> Tensor:
    """lam times the summed squared entries of every decayed weight matrix."""
    if lam < 0:
        raise ConfigError(f"l2 strength must be >= 0, got {lam}")
    if lam == 0.0:
        return Tensor(np.asarray(0.0, dtype=ps.dtype))
    weights = [t for name, t in ps.items() if ps.decays(name)]
    total = sum(float(np.square(w.data).sum()) for w in weights)
    out = Tensor(np.asarray(lam * total, dtype=ps.dtype))

    def rule():
        g = float(out.grad)
        for w in weights:
            accumulate(w, (2.0 * lam * g) * w.data)

    return record_op("l2_penalty", out, weights, rule)


# ---------------------------------------------------------------------------
# batching


def bucket_batches(items, batch_size: int, seed: int, key=len) -> list[list]:
    """Group items by key (length by default), shuffle within each bucket,
    cut into batches, and shuffle the batch order. Deterministic per seed."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    items = list(items)
    if not items:
        raise InputError("empty dataset")
    buckets: dict = {}
    for it in items:
        buckets.setdefault(key(it), []).append(it)
    rng = np.random.default_rng(seed)
    batches = []
    for k in sorted(buckets):
        group = buckets[k]
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        batches.extend(
            shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)
        )
    return [batches[i] for i in rng.permutation(len(batches))]


# ---------------------------------------------------------------------------
# epoch loop


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 3e-4
    l2: float = 0.0
    epochs: int = 1
    seed: int = 0
    dropout_emb: float = 0.0
    dropout_read: float = 0.0
    dropout_write: float = 0.0
    dropout_head: float = 0.0
    precision: str = "f32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr = 0 is allowed so a no-op epoch stays expressible
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        for site in ("dropout_emb", "dropout_read", "dropout_write", "dropout_head"):
            rate = getattr(self, site)
            if not (0.0 <= rate < 1.0):
                raise ConfigError(f"{site} must lie in [0, 1), got {rate}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")

    @classmethod
    def from_mapping(cls, cfg: dict) -> "TrainConfig":
        kw = {}
        casts = dict(
            batch_size=int, lr=float, l2=float, epochs=int, seed=int,
            dropout_emb=float, dropout_read=float, dropout_write=float,
            dropout_head=float, precision=str,
        )
        for key, cast in casts.items():
            if key in cfg:
                kw[key] = config_value(cfg, key, cast)
        return cls(**kw)


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float


def train_epoch(task, data, cfg: TrainConfig, epoch: int = 0) -> EpochMetrics:
    """One pass over `data`: forward, backward, Adam per batch.

    Dropout is driven by an rng seeded from (cfg.seed, epoch); batch makeup
    reshuffles per epoch the same way. A non-finite loss aborts with the
    batch index."""
    ps = task.params
    key = getattr(task, "bucket_key", len)
    batches = bucket_batches(data, cfg.batch_size, seed=cfg.seed + epoch, key=key)
    rng = np.random.default_rng((cfg.seed, epoch))
    total, correct, seen = 0.0, 0, 0
    for i, batch in enumerate(batches):
        ps.zero_grads()
        try:
            with Tape():
                loss, right = task.batch_loss(batch, rng=rng, train=True)
                if cfg.l2 > 0:
                    loss = loss + l2_penalty(ps, cfg.l2)
                backward(loss)
        except NumericError as e:
            raise NumericError(f"epoch {epoch}, batch {i}: {e}") from e
        val = float(loss.data)
        if not np.isfinite(val):
            raise NumericError(f"epoch {epoch}, batch {i}: non-finite loss {val}")
        adam_update(ps, grads_from(ps), cfg.lr)
        total += val * len(batch)
        correct += right
        seen += len(batch)
    return EpochMetrics(loss=total / seen, accuracy=correct / seen)


def fit(task, train_data, dev_data, cfg: TrainConfig, metrics_path=None, echo=None):
    """Run cfg.epochs epochs; returns the metric rows and optionally writes
    them as CSV (epoch, train_loss, train_acc, dev_loss, dev_acc).

    The train columns are the running numbers from the training pass
    (dropout on); `echo` additionally gets a line per epoch including the
    dropout-off re-evaluated train accuracy."""
    rows = []
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        if sink:
            sink.write(",".join(METRIC_COLUMNS) + "\n")
        for epoch in range(cfg.epochs):
            t0 = time.time()
            m = train_epoch(task, train_data, cfg, epoch)
            if dev_data:
                dev_loss, dev_acc = task.evaluate(dev_data)
            else:
                dev_loss, dev_acc = float("nan"), float("nan")
            rows.append((epoch, m.loss, m.accuracy, dev_loss, dev_acc))
            if sink:
                sink.write(
                    f"{epoch},{m.loss:.6f},{m.accuracy:.6f},{dev_loss:.6f},{dev_acc:.6f}\n"
                )
                sink.flush()
            if echo is not None:
                _, train_eval_acc = task.evaluate(train_data)
                echo(
                    f"epoch {epoch}: loss {m.loss:.4f} acc {m.accuracy:.4f} "
                    f"train-eval {train_eval_acc:.4f} dev {dev_acc:.4f} "
                    f"({time.time() - t0:.1f}s)"
                )
    finally:
        if sink:
            sink.close()
    return rows


# ---------------------------------------------------------------------------
# config files


def parse_config(text: str) -> dict:
    """Flat key = value lines; # starts a comment; blank lines ignored."""
    cfg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise FormatError(f"config line {lineno}: empty key")
        if key in cfg:
            raise FormatError(f"config line {lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


_MISSING = object()


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def config_value(cfg: dict, key: str, convert=str, default=_MISSING):
    if key not in cfg:
        if default is _MISSING:
            raise ConfigError(f"missing config key {key!r}")
        return default
    try:
        return convert(cfg[key])
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: {e}") from e
