"""Embedding and corpus ingestion, vocabularies, padding, and the synthetic
generators used by the desk-scale experiments.

File formats (byte-level examples live in the README):
  embeddings  one `token v1 .. vk` line per word, space-separated decimals
  labeled     `label<TAB>text` per line, whitespace-tokenized text
  pairs       `label<TAB>text-a<TAB>text-b` per line
"""

from __future__ import annotations

import warnings
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, InputError
from .tensor import DEFAULT_DTYPE

PAD, UNK, BEGIN, END = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BEGIN, END)


class Vocabulary:
    """Dense token ids with the four specials pinned to 0..3.

    An optional cap keeps only the `cap` most frequent regular tokens,
    breaking count ties lexicographically.
    """

    def __init__(self, tokens: Iterable[str] = (), cap: int | None = None):
        if cap is not None and cap < 0:
            raise ConfigError(f"vocabulary cap must be >= 0, got {cap}")
        counts = Counter(t for t in tokens if t not in SPECIALS)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if cap is not None:
            ranked = ranked[:cap]
        self._tokens = list(SPECIALS) + [t for t, _ in ranked]
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    @property
    def pad(self) -> int:
        return self._ids[PAD]

    @property
    def unk(self) -> int:
        return self._ids[UNK]

    @property
    def begin(self) -> int:
        return self._ids[BEGIN]

    @property
    def end(self) -> int:
        return self._ids[END]

    def id(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK])

    def token(self, idx: int) -> str:
        if not (0 <= idx < len(self._tokens)):
            raise InputError(f"token id {idx} outside vocabulary of {len(self._tokens)}")
        return self._tokens[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token(i) for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self._tokens)


class EmbeddingTable:
    """Fixed word vectors; absent tokens read as the zero vector.

    The padding token gets its own designated vector (zero unless given).
    Fixed by default; a trainable lookup is a model parameter, not a table.
    """

    def __init__(
        self,
        dim: int,
        vectors: dict[str, np.ndarray] | None = None,
        trainable: bool = False,
        pad_vector: np.ndarray | None = None,
    ):
        if dim < 1:
            raise ConfigError(f"embedding dimension must be >= 1, got {dim}")
        self.dim = dim
        self.trainable = trainable
        self._zero = np.zeros(dim, dtype=DEFAULT_DTYPE)
        self._vectors: dict[str, np.ndarray] = {}
        for token, vec in (vectors or {}).items():
            self._set(token, vec)
        if pad_vector is not None:
            self._set(PAD, pad_vector)
        self.pad_vector = self._vectors.get(PAD, self._zero)

    def _set(self, token: str, vec: np.ndarray) -> None:
        arr = np.asarray(vec, dtype=DEFAULT_DTYPE)
        if arr.shape != (self.dim,):
            raise ConfigError(f"vector for {token!r} has shape {arr.shape}, expected ({self.dim},)")
        self._vectors[token] = arr

    def vector(self, token: str) -> np.ndarray:
        if token == PAD:
            return self.pad_vector
        return self._vectors.get(token, self._zero)

    def embed(self, tokens: Sequence[str]) -> list[np.ndarray]:
        return [self.vector(t) for t in tokens]

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)


def load_embeddings(path, expected_k: int) -> EmbeddingTable:
    """Parse a `token v1 .. vk` text file into an EmbeddingTable.

    Dimension-inconsistent or non-numeric lines fail fast with their 1-based
    line number; duplicate tokens keep the first occurrence (warning carries
    the count)."""
    if expected_k < 1:
        raise ConfigError(f"expected dimension must be >= 1, got {expected_k}")
    vectors: dict[str, np.ndarray] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != expected_k:
                raise FormatError(
                    f"{path} line {lineno}: expected {expected_k} values, got {len(values)}"
                )
            try:
                vec = np.array(values, dtype=DEFAULT_DTYPE)
            except ValueError:
                raise FormatError(f"{path} line {lineno}: non-numeric value") from None
            if token in vectors:
                duplicates += 1
                continue
            vectors[token] = vec
    if not vectors:
        raise FormatError(f"{path}: no embedding lines found")
    if duplicates:
        warnings.warn(f"{path}: kept first of {duplicates} duplicate token lines")
    return EmbeddingTable(expected_k, vectors)


def pad_or_crop(tokens: Sequence, length: int, pad_token=PAD) -> list:
    """Crop to the first `length` items or append pad tokens up to it."""
    if length < 1:
        raise ConfigError(f"target length must be >= 1, got {length}")
    out = list(tokens)[:length]
    out.extend([pad_token] * (length - len(out)))
    return out


# ---------------------------------------------------------------------------
# corpus files


def _tokenize(text: str, lowercase: bool) -> list[str]:
    return (text.lower() if lowercase else text).split()


def _read_rows(path, fields: int, lowercase: bool):
    rows, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != fields or not parts[0].strip():
                skipped += 1
                continue
            texts = [_tokenize(p, lowercase) for p in parts[1:]]
            if any(not t for t in texts):
                skipped += 1
                continue
            rows.append((*texts, parts[0].strip()))
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} malformed lines")
    if not rows:
        raise InputError(f"{path}: no usable rows")
    return rows


def read_pairs(path, lowercase: bool = False) -> list[tuple[list[str], list[str], str]]:
    """label<TAB>text-a<TAB>text-b rows; malformed lines are skipped with a
    warning count; an empty result is an error."""
    return _read_rows(path, fields=3, lowercase=lowercase)


def read_labeled(path, lowercase: bool = False) -> list[tuple[list[str], str]]:
    """label<TAB>text rows, same conventions as read_pairs."""
    return _read_rows(path, fields=2, lowercase=lowercase)


def write_pairs(path, rows: Iterable[tuple[list[str], list[str], str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, label in rows:
            fh.write(f"{label}\t{' '.join(a)}\t{' '.join(b)}\n")


def write_labeled(path, rows: Iterable[tuple[list[str], str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text, label in rows:
            fh.write(f"{label}\t{' '.join(text)}\n")


# ---------------------------------------------------------------------------
# synthetic tasks

SYNTHETIC_TASKS = ("copy", "reverse", "associative-recall", "toy-entailment")
NEGATION = "not"

ENTAIL, CONTRADICT, NEUTRAL = "entail", "contradict", "neutral"


def entailment_label(premise: Sequence[str], hypothesis: Sequence[str]) -> str:
    """The toy rule: subset means entail, disjoint plus the negation marker
    means contradict, anything else is neutral."""
    p, h = set(premise), set(hypothesis)
    if h <= p:
        return ENTAIL
    if not (h & p) and NEGATION in h:
        return CONTRADICT
    return NEUTRAL


def _symbols(vocab: int) -> list[str]:
    width = len(str(vocab - 1))
    return [f"s{i:0{width}d}" for i in range(vocab)]


def gen_synthetic(task: str, sizes: dict, seed: int):
    """Deterministic synthetic datasets.

    sizes keys (ints): n (required), vocab, min_len, max_len, pairs.
      copy / reverse      -> [(src, tgt)]
      associative-recall  -> [(sequence, value-token)]; the sequence is
                             key value ... key value query with distinct keys
      toy-entailment      -> [(premise, hypothesis, label)]
    """
    if task not in SYNTHETIC_TASKS:
        raise ConfigError(f"unknown synthetic task {task!r}, pick from {SYNTHETIC_TASKS}")
    n = int(sizes.get("n", 0))
    vocab = int(sizes.get("vocab", 10))
    min_len = int(sizes.get("min_len", 1))
    max_len = int(sizes.get("max_len", 8))
    pairs = int(sizes.get("pairs", 3))
    if n < 1:
        raise ConfigError(f"need n >= 1 instances, got {n}")
    if vocab < 3:
        raise ConfigError(f"need vocabulary size >= 3, got {vocab}")
    if not (1 <= min_len <= max_len):
        raise ConfigError(f"bad length bounds [{min_len}, {max_len}]")
    rng = np.random.default_rng(seed)
    syms = _symbols(vocab)

    if task in ("copy", "reverse"):
        out = []
        for _ in range(n):
            length = int(rng.integers(min_len, max_len + 1))
            src = [syms[i] for i in rng.integers(0, vocab, size=length)]
            out.append((src, src[::-1] if task == "reverse" else list(src)))
        return out

    if task == "associative-recall":
        if pairs < 1:
            raise ConfigError(f"need pairs >= 1, got {pairs}")
        if 2 * pairs > vocab:
            raise ConfigError(
                f"{pairs} key-value pairs need {2 * pairs} distinct symbols, vocabulary has {vocab}"
            )
        out = []
        for _ in range(n):
            chosen = rng.choice(vocab, size=2 * pairs, replace=False)
            keys = [syms[i] for i in chosen[:pairs]]
            values = [syms[i] for i in chosen[pairs:]]
            seq = []
            for k, v in zip(keys, values):
                seq += [k, v]
            q = int(rng.integers(pairs))
            out.append((seq + [keys[q]], values[q]))
        return out

    # toy-entailment; the negation marker lives outside the symbol list
    if max_len + 1 > vocab:
        raise ConfigError(
            f"premises of length {max_len} need that many distinct symbols plus a spare, vocabulary has {vocab}"
        )
    out = []
    for _ in range(n):
        plen = int(rng.integers(min_len, max_len + 1))
        premise = [syms[i] for i in rng.choice(vocab, size=plen, replace=False)]
        rest = [s for s in syms if s not in premise]
        kind = int(rng.integers(3))
        if kind == 0:
            hlen = int(rng.integers(1, plen + 1))
            hyp = [premise[i] for i in rng.choice(plen, size=hlen, replace=False)]
        elif kind == 1:
            hlen = int(rng.integers(1, min(len(rest), max_len) + 1))
            hyp = [rest[i] for i in rng.choice(len(rest), size=hlen, replace=False)]
            hyp.insert(int(rng.integers(len(hyp) + 1)), NEGATION)
        else:
            novel = rest[int(rng.integers(len(rest)))]
            shared = premise[int(rng.integers(plen))]
            hyp = [shared, novel] if rng.integers(2) else [novel, shared]
        out.append((premise, hyp, entailment_label(premise, hyp)))
    return out
