"""Task assembly: token-vector sources, the five runnable task types, and
construction from a flat config mapping.

A task owns its ParameterSet and model, satisfies the training protocol
(params / batch_loss / evaluate / bucket_key), and renders predictions in
the line formats the CLI writes.
"""

from __future__ import annotations

import os

import numpy as np

from .cells import ParameterSet
from .data import (
    PAD,
    EmbeddingTable,
    Vocabulary,
    load_embeddings,
    pad_or_crop,
    read_labeled,
    read_pairs,
)
from .errors import ConfigError, InputError
from .heads import (
    DocumentClassifier,
    PairClassifier,
    QaScorer,
    SentenceClassifier,
    Translator,
)
from .tensor import Tensor, dropout, no_grad, scale, take_row
from .train import (
    TrainConfig,
    config_value,
    loss_xent_sigmoid,
    loss_xent_softmax,
    parse_bool,
)

TASKS = ("pair", "sentence", "answer", "document", "translate")
SENTENCE_SEP = "|"


# ---------------------------------------------------------------------------
# token vectors


class FixedVectors:
    """Constant vectors from an embedding table; OOV reads as zero."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim
        self.dtype = np.float32

    def register(self, ps: ParameterSet) -> None:
        self.dtype = ps.dtype

    def tensors(self, tokens) -> list[Tensor]:
        return [Tensor(self.table.vector(t).astype(self.dtype)) for t in tokens]


class TrainableLookup:
    """A trainable embedding matrix over a fixed vocabulary, one row per id."""

    def __init__(self, name: str, vocab: Vocabulary, dim: int):
        if dim < 1:
            raise ConfigError(f"{name}: embedding dim must be >= 1, got {dim}")
        self.name = name
        self.vocab = vocab
        self.dim = dim
        self.table: Tensor | None = None

    def register(self, ps: ParameterSet) -> None:
        init = ps.rng.uniform(-0.1, 0.1, size=(len(self.vocab), self.dim))
        self.table = ps.constant(f"{self.name}/table", init, decay=False)

    def tensors(self, tokens) -> list[Tensor]:
        return [take_row(self.table, self.vocab.id(t)) for t in tokens]


def _label_map(labels) -> dict:
    labels = list(labels)
    if len(labels) != len(set(labels)):
        raise ConfigError(f"duplicate labels in {labels}")
    return {label: i for i, label in enumerate(labels)}


class _Task:
    """Shared plumbing: parameter ownership, padding, embedding dropout."""

    def __init__(self, source, seed=0, dtype=np.float32, dropout_emb=0.0, fixed_len=None):
        if fixed_len is not None and fixed_len < 1:
            raise ConfigError(f"fixed_len must be >= 1, got {fixed_len}")
        self.params = ParameterSet(seed=seed, dtype=dtype)
        self.source = source
        self.dropout_emb = dropout_emb
        self.fixed_len = fixed_len
        source.register(self.params)

    def _vecs(self, tokens, rng=None, train=False) -> list[Tensor]:
        if self.fixed_len is not None:
            tokens = pad_or_crop(tokens, self.fixed_len, PAD)
        vs = self.source.tensors(tokens)
        if train and self.dropout_emb > 0.0:
            vs = [dropout(v, self.dropout_emb, rng, train) for v in vs]
        return vs

    def evaluate(self, items):
        with no_grad():
            loss, correct = self.batch_loss(items)
        return float(loss.data), correct / len(items)


class PairTask(_Task):
    """Two-sentence classification over (tokens-a, tokens-b, label) rows."""

    def __init__(self, model: PairClassifier, source, labels, **kw):
        super().__init__(source, **kw)
        self.model = model
        self.labels = list(labels)
        self.label_ids = _label_map(self.labels)
        model.register(self.params)

    def bucket_key(self, item):
        return len(item[0]) + len(item[1])

    def _gold(self, label):
        if label not in self.label_ids:
            raise InputError(f"unknown label {label!r}, expected one of {self.labels}")
        return self.label_ids[label]

    def batch_loss(self, batch, rng=None, train=False):
        total, correct = None, 0
        for a, b, label in batch:
            logits = self.model.logits(
                self._vecs(a, rng, train), self._vecs(b, rng, train), rng=rng, train=train
            )
            term = loss_xent_softmax(logits, self._gold(label))
            total = term if total is None else total + term
            correct += int(np.argmax(logits.data) == self._gold(label))
        return scale(total, 1.0 / len(batch)), correct

    def predict_lines(self, items) -> list[str]:
        out = []
        with no_grad():
            for i, (a, b, _) in enumerate(items):
                logits = self.model.logits(self._vecs(a), self._vecs(b))
                out.append(f"{i}\t{self.labels[int(np.argmax(logits.data))]}")
        return out


class SentenceTask(_Task):
    """Single-sentence classification over (tokens, label) rows."""

    def __init__(self, model: SentenceClassifier, source, labels, **kw):
        super().__init__(source, **kw)
        self.model = model
        self.labels = list(labels)
        self.label_ids = _label_map(self.labels)
        if model.classes != len(self.labels):
            raise ConfigError(
                f"model has {model.classes} classes but {len(self.labels)} labels given"
            )
        model.register(self.params)

    def bucket_key(self, item):
        return len(item[0])

    def batch_loss(self, batch, rng=None, train=False):
        total, correct = None, 0
        for tokens, label in batch:
            if label not in self.label_ids:
                raise InputError(f"unknown label {label!r}, expected one of {self.labels}")
            gold = self.label_ids[label]
            logits = self.model.logits(self._vecs(tokens, rng, train), rng=rng, train=train)
            term = loss_xent_softmax(logits, gold)
            total = term if total is None else total + term
            correct += int(np.argmax(logits.data) == gold)
        return scale(total, 1.0 / len(batch)), correct

    def predict_lines(self, items) -> list[str]:
        out = []
        with no_grad():
            for i, (tokens, _) in enumerate(items):
                logits = self.model.logits(self._vecs(tokens))
                out.append(f"{i}\t{self.labels[int(np.argmax(logits.data))]}")
        return out


class AnswerTask(_Task):
    """Question-answer scoring over (question, answer, label) rows with
    labels "1" (correct) and "0"."""

    def __init__(self, model: QaScorer, source, **kw):
        super().__init__(source, **kw)
        self.model = model
        model.register(self.params)

    def bucket_key(self, item):
        return len(item[0]) + len(item[1])

    @staticmethod
    def _gold(label):
        if label not in ("0", "1"):
            raise InputError(f"answer labels must be 0 or 1, got {label!r}")
        return int(label)

    def batch_loss(self, batch, rng=None, train=False):
        total, correct = None, 0
        for q, a, label in batch:
            gold = self._gold(label)
            p = self.model.score(
                self._vecs(q, rng, train), self._vecs(a, rng, train), rng=rng, train=train
            )
            term = loss_xent_sigmoid(p, gold)
            total = term if total is None else total + term
            correct += int((float(p.data) > 0.5) == bool(gold))
        return scale(total, 1.0 / len(batch)), correct

    def score_value(self, question, answer) -> float:
        with no_grad():
            return float(self.model.score(self._vecs(question), self._vecs(answer)).data)

    def predict_lines(self, items) -> list[str]:
        return [
            f"{i}\t{self.score_value(q, a):.6f}" for i, (q, a, _) in enumerate(items)
        ]


class DocumentTask(_Task):
    """Document classification; the token stream splits into sentences at
    the "|" separator token. Buckets by sentence count."""

    def __init__(self, model: DocumentClassifier, source, labels, **kw):
        super().__init__(source, **kw)
        self.model = model
        self.labels = list(labels)
        self.label_ids = _label_map(self.labels)
        model.register(self.params)

    @staticmethod
    def split_sentences(tokens) -> list[list[str]]:
        sentences, current = [], []
        for tok in tokens:
            if tok == SENTENCE_SEP:
                if current:
                    sentences.append(current)
                    current = []
            else:
                current.append(tok)
        if current:
            sentences.append(current)
        if not sentences:
            raise InputError("document has no sentences")
        return sentences

    def bucket_key(self, item):
        return len(self.split_sentences(item[0]))

    def _doc_vecs(self, tokens, rng=None, train=False):
        return [self._vecs(s, rng, train) for s in self.split_sentences(tokens)]

    def batch_loss(self, batch, rng=None, train=False):
        total, correct = None, 0
        for tokens, label in batch:
            if label not in self.label_ids:
                raise InputError(f"unknown label {label!r}, expected one of {self.labels}")
            gold = self.label_ids[label]
            logits = self.model.logits(self._doc_vecs(tokens, rng, train), rng=rng, train=train)
            term = loss_xent_softmax(logits, gold)
            total = term if total is None else total + term
            correct += int(np.argmax(logits.data) == gold)
        return scale(total, 1.0 / len(batch)), correct

    def predict_lines(self, items) -> list[str]:
        out = []
        with no_grad():
            for i, (tokens, _) in enumerate(items):
                logits = self.model.logits(self._doc_vecs(tokens))
                out.append(f"{i}\t{self.labels[int(np.argmax(logits.data))]}")
        return out


class TranslateTask(_Task):
    """Sequence transduction over (source, target, "-") rows.

    Training is teacher-forced word-level cross entropy; evaluation is
    greedy decoding scored as exact position matches over the gold tokens
    (a short hypothesis scores its missing positions as wrong)."""

    def __init__(self, model: Translator, source, tgt_vocab: Vocabulary, decode_len=32, **kw):
        super().__init__(source, **kw)
        self.model = model
        self.tgt_vocab = tgt_vocab
        self.decode_len = decode_len
        model.register(self.params)

    def bucket_key(self, item):
        return len(item[0])

    def _target_ids(self, tokens) -> list[int]:
        # gold stream the decoder must emit: tokens then the end marker
        return self.tgt_vocab.encode(tokens) + [self.tgt_vocab.end]

    def batch_loss(self, batch, rng=None, train=False):
        total, correct, positions = None, 0, 0
        for src, tgt, _ in batch:
            gold = self._target_ids(tgt)
            logits = self.model.teacher_logits(
                self._vecs(src, rng, train), gold, self.tgt_vocab.begin, rng=rng, train=train
            )
            for step_logits, g in zip(logits, gold):
                term = loss_xent_softmax(step_logits, g)
                total = term if total is None else total + term
                correct += int(np.argmax(step_logits.data) == g)
                positions += 1
        # token-level task: report correctness as a fraction of the batch so
        # the epoch accuracy stays in [0, 1]
        return scale(total, 1.0 / positions), correct / positions * len(batch)

    def translate_tokens(self, src_tokens) -> list[str]:
        ids = self.model.greedy(
            self._vecs(src_tokens),
            self.tgt_vocab.begin,
            self.tgt_vocab.end,
            max_len=self.decode_len,
        )
        return self.tgt_vocab.decode(ids)

    def evaluate(self, items):
        # loss is teacher-forced; accuracy is greedy decoding vs gold
        with no_grad():
            loss, _ = self.batch_loss(items)
            matched, total = 0, 0
            for src, tgt, _ in items:
                hyp = self.translate_tokens(src)
                total += len(tgt)
                matched += sum(1 for i, t in enumerate(tgt) if i < len(hyp) and hyp[i] == t)
        return float(loss.data), matched / total

    def translate_lines(self, items) -> list[str]:
        with no_grad():
            return [" ".join(self.translate_tokens(src)) for src, _, _ in items]

    def predict_lines(self, items) -> list[str]:
        return [f"{i}\t{line}" for i, line in enumerate(self.translate_lines(items))]


# ---------------------------------------------------------------------------
# ranking metrics


def ranking_metrics(pools) -> tuple[float, float]:
    """(MAP, MRR) over candidate pools of (score, is-relevant) pairs, ranked
    by descending score. Pools without a relevant candidate are skipped."""
    aps, rrs = [], []
    for pool in pools:
        ranked = sorted(pool, key=lambda sr: -sr[0])
        relevant_seen, precisions, first = 0, [], None
        for rank, (_, rel) in enumerate(ranked, 1):
            if rel:
                relevant_seen += 1
                precisions.append(relevant_seen / rank)
                if first is None:
                    first = rank
        if not precisions:
            continue
        aps.append(sum(precisions) / relevant_seen)
        rrs.append(1.0 / first)
    if not aps:
        raise InputError("no pool contains a relevant candidate")
    return sum(aps) / len(aps), sum(rrs) / len(rrs)


# ---------------------------------------------------------------------------
# config-driven construction


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _compose_hidden(cfg) -> tuple:
    raw = cfg.get("compose_hidden", "").strip()
    if not raw:
        return ()
    try:
        return tuple(int(p) for p in raw.split(","))
    except ValueError:
        raise ConfigError(f"compose_hidden must be comma-separated ints, got {raw!r}") from None


def _labels_from(cfg, rows, position):
    raw = cfg.get("labels", "").strip()
    if raw:
        return [p.strip() for p in raw.split(",")]
    return sorted({row[position] for row in rows})


def task_from_config(cfg: dict, base_dir="."):
    """Build (task, train_rows, dev_rows, TrainConfig) from a parsed config.

    Data paths resolve relative to base_dir (the config file's directory).
    With an embeddings= path the vectors are fixed; otherwise a trainable
    lookup over the training vocabulary is created.
    """
    kind = config_value(cfg, "task")
    if kind not in TASKS:
        raise ConfigError(f"unknown task {kind!r}, pick from {TASKS}")
    tcfg = TrainConfig.from_mapping(cfg)
    dim = config_value(cfg, "dim", int)
    in_dim = config_value(cfg, "in_dim", int, default=None)
    if in_dim is not None and kind != "answer":
        raise ConfigError("in_dim (input projection) is only supported for task=answer")
    emb_width = in_dim if in_dim is not None else dim
    hidden = config_value(cfg, "hidden", int, default=1024)
    layers = config_value(cfg, "layers", int, default=1)
    lowercase = config_value(cfg, "lowercase", parse_bool, default=False)
    fixed_len = config_value(cfg, "fixed_len", int, default=None)
    compose_hidden = _compose_hidden(cfg)
    dtype = np.float64 if tcfg.precision == "f64" else np.float32

    paired = kind in ("pair", "answer", "translate")
    reader = read_pairs if paired else read_labeled
    train_rows = reader(_resolve(base_dir, config_value(cfg, "train")), lowercase=lowercase)
    dev_path = cfg.get("dev", "").strip()
    dev_rows = reader(_resolve(base_dir, dev_path), lowercase=lowercase) if dev_path else None

    def corpus_tokens():
        for row in train_rows:
            for part in row[:-1]:
                yield from part

    if cfg.get("embeddings", "").strip():
        table = load_embeddings(_resolve(base_dir, cfg["embeddings"]), emb_width)
        source = FixedVectors(table)
    else:
        cap = config_value(cfg, "vocab_cap", int, default=None)
        source = TrainableLookup("emb", Vocabulary(corpus_tokens(), cap=cap), emb_width)

    common = dict(
        seed=tcfg.seed,
        dtype=dtype,
        dropout_emb=tcfg.dropout_emb,
        fixed_len=fixed_len,
    )
    enc_kw = dict(
        compose_hidden=compose_hidden,
        layers=layers,
        dropout_read=tcfg.dropout_read,
        dropout_write=tcfg.dropout_write,
    )

    if kind == "pair":
        labels = _labels_from(cfg, train_rows, 2)
        model = PairClassifier(
            "pair", dim, hidden=hidden, classes=len(labels),
            variant=config_value(cfg, "variant", default="basic"),
            dropout_head=tcfg.dropout_head, **enc_kw,
        )
        task = PairTask(model, source, labels, **common)
    elif kind == "sentence":
        labels = _labels_from(cfg, train_rows, 1)
        model = SentenceClassifier(
            "sent", dim, classes=len(labels), hidden=hidden,
            dropout_head=tcfg.dropout_head, **enc_kw,
        )
        task = SentenceTask(model, source, labels, **common)
    elif kind == "answer":
        model = QaScorer(
            "qa", dim, hidden=hidden, in_dim=in_dim,
            dropout_head=tcfg.dropout_head, **enc_kw,
        )
        task = AnswerTask(model, source, **common)
    elif kind == "document":
        labels = _labels_from(cfg, train_rows, 1)
        enc_kw.pop("layers")
        model = DocumentClassifier(
            "doc", dim, classes=len(labels),
            top=config_value(cfg, "variant", default="mem"), **enc_kw,
        )
        task = DocumentTask(model, source, labels, **common)
    else:
        tgt_vocab = Vocabulary(t for _, tgt, _ in train_rows for t in tgt)
        model = Translator(
            "tr", dim, tgt_vocab=len(tgt_vocab),
            variant=config_value(cfg, "variant", default="mem-mem"), **enc_kw,
        )
        task = TranslateTask(
            model, source, tgt_vocab,
            decode_len=config_value(cfg, "decode_len", int, default=32), **common,
        )
    return task, train_rows, dev_rows, tcfg
