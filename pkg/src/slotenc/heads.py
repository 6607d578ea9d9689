"""Task heads: sentence-pair classification, answer scoring, single-sentence
and document classification, and the encoder-decoder for sequence transduction.

Each head owns its encoders and output layers; construct, register into a
ParameterSet, then call the matching free function (nli_classify, qa_score,
classify_sentence, encode_document, seq2seq_translate) or the methods they
delegate to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cells import Linear, LstmStack, ParameterSet
from .encoder import (
    EncoderConfig,
    EncoderState,
    Memory,
    SlotEncoder,
    encode_sequence,
    encode_step,
)
from .errors import ConfigError, DimensionError, InputError, VocabularyError
from .tensor import (
    Tensor,
    absval,
    concat,
    dropout,
    matvec,
    mul,
    no_grad,
    pick,
    relu,
    sigmoid,
    softmax,
    stack_cols,
    take_row,
    vecmat,
)


@dataclass
class PairFeatures:
    """Interaction features of two sentence vectors."""

    concat: Tensor    # [u; v], 2k
    absdiff: Tensor   # |u - v|, k
    product: Tensor   # u * v, k
    combined: Tensor  # [concat; absdiff; product], 4k


def pair_features(u: Tensor, v: Tensor) -> PairFeatures:
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"pair features need equal vectors, got {u.shape} and {v.shape}")
    both = concat([u, v])
    diff = absval(u - v)
    prod = mul(u, v)
    return PairFeatures(both, diff, prod, concat([both, diff, prod]))


def attention_blend(query: Tensor, outputs: Sequence[Tensor]) -> Tensor:
    """Softmax over dot products of query with each output; weighted sum."""
    mat = stack_cols(list(outputs))
    weights = softmax(vecmat(query, mat))
    return matvec(mat, weights)


def _encoder_cfg(dim: int, aux: int, compose_hidden, layers: int, dropout_read: float, dropout_write: float) -> EncoderConfig:
    return EncoderConfig(
        dim=dim,
        aux=aux,
        compose_hidden=tuple(compose_hidden),
        read_layers=layers,
        write_layers=layers,
        dropout_read=dropout_read,
        dropout_write=dropout_write,
    )


class PairClassifier:
    """Two-sentence classifier.

    Variants:
      basic    - one encoder applied to both sentences, separate memories.
      aux      - second sentence is encoded with the first sentence's final
                 memory attached as an auxiliary memory (separate encoders).
      aux-attn - additionally attends over the first sentence's outputs with
                 the second sentence's final state and uses the blended
                 vector in place of the raw first-sentence vector.
    """

    VARIANTS = ("basic", "aux", "aux-attn")

    def __init__(
        self,
        name: str,
        dim: int,
        hidden: int = 1024,
        classes: int = 3,
        variant: str = "basic",
        compose_hidden: Sequence[int] = (),
        layers: int = 1,
        dropout_read: float = 0.0,
        dropout_write: float = 0.0,
        dropout_head: float = 0.0,
    ):
        if variant not in self.VARIANTS:
            raise ConfigError(f"{name}: unknown variant {variant!r}, pick from {self.VARIANTS}")
        if classes < 2:
            raise ConfigError(f"{name}: need at least 2 classes, got {classes}")
        self.name = name
        self.dim = dim
        self.variant = variant
        self.dropout_head = dropout_head
        cfg = lambda aux: _encoder_cfg(dim, aux, compose_hidden, layers, dropout_read, dropout_write)
        if variant == "basic":
            self.enc = SlotEncoder(f"{name}/enc", cfg(0))
            self.encoders = [self.enc]
        else:
            self.enc_first = SlotEncoder(f"{name}/enc_a", cfg(0))
            self.enc_second = SlotEncoder(f"{name}/enc_b", cfg(1))
            self.encoders = [self.enc_first, self.enc_second]
        self.hidden = Linear(f"{name}/hidden", 4 * dim, hidden)
        self.out = Linear(f"{name}/out", hidden, classes)

    def register(self, ps: ParameterSet) -> None:
        for enc in self.encoders:
            enc.register(ps)
        self.hidden.register(ps)
        self.out.register(ps)

    def logits(
        self,
        premise: Sequence[Tensor],
        hypothesis: Sequence[Tensor],
        rng=None,
        train: bool = False,
    ) -> Tensor:
        if not list(premise) or not list(hypothesis):
            raise InputError("premise and hypothesis must be nonempty")
        if self.variant == "basic":
            rp = encode_sequence(self.enc, premise, rng=rng, train=train)
            rh = encode_sequence(self.enc, hypothesis, rng=rng, train=train)
            u, v = rp.final, rh.final
        else:
            rp = encode_sequence(self.enc_first, premise, rng=rng, train=train)
            rh = encode_sequence(
                self.enc_second, hypothesis, aux=[rp.memory], rng=rng, train=train
            )
            v = rh.final
            u = attention_blend(v, rp.outputs) if self.variant == "aux-attn" else rp.final
        feats = pair_features(u, v)
        hid = relu(self.hidden.apply(feats.combined))
        hid = dropout(hid, self.dropout_head, rng, train)
        return self.out.apply(hid)

    def classify(self, premise, hypothesis, rng=None, train: bool = False) -> Tensor:
        return softmax(self.logits(premise, hypothesis, rng=rng, train=train))


def nli_classify(model: PairClassifier, premise, hypothesis) -> Tensor:
    """Distribution over the pair classes (entail / contradict / neutral order
    is whatever the label vocabulary defines)."""
    return model.classify(premise, hypothesis)


class QaScorer:
    """Scores a question-answer pair with a single probability.

    The answer is encoded first; the question encoder attends over the
    answer's final memory as an auxiliary memory. The answer vector entering
    the pair features is attention-blended from the answer encoder outputs,
    keyed by the final question state.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        hidden: int = 512,
        in_dim: int | None = None,
        compose_hidden: Sequence[int] = (),
        layers: int = 1,
        dropout_read: float = 0.0,
        dropout_write: float = 0.0,
        dropout_head: float = 0.0,
    ):
        self.name = name
        self.dropout_head = dropout_head
        base = dict(
            compose_hidden=tuple(compose_hidden),
            read_layers=layers,
            write_layers=layers,
            dropout_read=dropout_read,
            dropout_write=dropout_write,
            in_dim=in_dim,
        )
        self.enc_answer = SlotEncoder(f"{name}/ans", EncoderConfig(dim=dim, aux=0, **base))
        self.enc_question = SlotEncoder(f"{name}/q", EncoderConfig(dim=dim, aux=1, **base))
        self.hidden = Linear(f"{name}/hidden", 4 * dim, hidden)
        self.out = Linear(f"{name}/out", hidden, 1)

    def register(self, ps: ParameterSet) -> None:
        self.enc_answer.register(ps)
        self.enc_question.register(ps)
        self.hidden.register(ps)
        self.out.register(ps)

    def score(self, question: Sequence[Tensor], answer: Sequence[Tensor], rng=None, train: bool = False) -> Tensor:
        if not list(question) or not list(answer):
            raise InputError("question and answer must be nonempty")
        ra = encode_sequence(self.enc_answer, answer, rng=rng, train=train)
        rq = encode_sequence(self.enc_question, question, aux=[ra.memory], rng=rng, train=train)
        blended = attention_blend(rq.final, ra.outputs)
        feats = pair_features(rq.final, blended)
        hid = relu(self.hidden.apply(feats.combined))
        hid = dropout(hid, self.dropout_head, rng, train)
        return sigmoid(pick(self.out.apply(hid), 0))


def qa_score(model: QaScorer, question, answer) -> Tensor:
    return model.score(question, answer)


class SentenceClassifier:
    def __init__(
        self,
        name: str,
        dim: int,
        classes: int,
        hidden: int = 1024,
        compose_hidden: Sequence[int] = (),
        layers: int = 1,
        dropout_read: float = 0.0,
        dropout_write: float = 0.0,
        dropout_head: float = 0.0,
    ):
        if classes < 2:
            raise ConfigError(f"{name}: need at least 2 classes, got {classes}")
        self.name = name
        self.classes = classes
        self.dropout_head = dropout_head
        self.enc = SlotEncoder(
            f"{name}/enc", _encoder_cfg(dim, 0, compose_hidden, layers, dropout_read, dropout_write)
        )
        self.hidden = Linear(f"{name}/hidden", dim, hidden)
        self.out = Linear(f"{name}/out", hidden, classes)

    def register(self, ps: ParameterSet) -> None:
        self.enc.register(ps)
        self.hidden.register(ps)
        self.out.register(ps)

    def logits(self, tokens: Sequence[Tensor], rng=None, train: bool = False) -> Tensor:
        res = encode_sequence(self.enc, tokens, rng=rng, train=train)
        hid = relu(self.hidden.apply(res.final))
        hid = dropout(hid, self.dropout_head, rng, train)
        return self.out.apply(hid)

    def classify(self, tokens, rng=None, train: bool = False) -> Tensor:
        return softmax(self.logits(tokens, rng=rng, train=train))


def classify_sentence(model: SentenceClassifier, tokens) -> Tensor:
    return model.classify(tokens)


class DocumentClassifier:
    """Sentence-level encoder feeding a document-level encoder or LSTM.

    The document-level memory is re-initialized from the sentence vectors of
    each document; the document vector is the top model's final output.
    """

    TOPS = ("mem", "lstm")

    def __init__(
        self,
        name: str,
        dim: int,
        classes: int,
        top: str = "mem",
        compose_hidden: Sequence[int] = (),
        dropout_read: float = 0.0,
        dropout_write: float = 0.0,
    ):
        if top not in self.TOPS:
            raise ConfigError(f"{name}: unknown top {top!r}, pick from {self.TOPS}")
        if classes < 2:
            raise ConfigError(f"{name}: need at least 2 classes, got {classes}")
        self.name = name
        self.top = top
        self.sent_enc = SlotEncoder(
            f"{name}/sent", _encoder_cfg(dim, 0, compose_hidden, 1, dropout_read, dropout_write)
        )
        if top == "mem":
            self.top_enc = SlotEncoder(
                f"{name}/top", _encoder_cfg(dim, 0, compose_hidden, 1, dropout_read, dropout_write)
            )
        else:
            self.top_lstm = LstmStack(f"{name}/top", dim, dim)
        self.out = Linear(f"{name}/out", dim, classes)

    def register(self, ps: ParameterSet) -> None:
        self.sent_enc.register(ps)
        if self.top == "mem":
            self.top_enc.register(ps)
        else:
            self.top_lstm.register(ps)
        self.out.register(ps)

    def document_vector(self, sentences: Sequence[Sequence[Tensor]], rng=None, train: bool = False) -> Tensor:
        sentences = list(sentences)
        if not sentences:
            raise InputError("document has no sentences")
        sent_vecs = [
            encode_sequence(self.sent_enc, s, rng=rng, train=train).final for s in sentences
        ]
        if self.top == "mem":
            return encode_sequence(self.top_enc, sent_vecs, rng=rng, train=train).final
        h = None
        states = self.top_lstm.zero_state(sent_vecs[0].dtype)
        for v in sent_vecs:
            h, states = self.top_lstm.step(v, states)
        return h

    def logits(self, sentences, rng=None, train: bool = False) -> Tensor:
        return self.out.apply(self.document_vector(sentences, rng=rng, train=train))

    def classify(self, sentences, rng=None, train: bool = False) -> Tensor:
        return softmax(self.logits(sentences, rng=rng, train=train))


def encode_document(model: DocumentClassifier, sentences) -> Tensor:
    return model.document_vector(sentences)


class Translator:
    """Encoder-decoder over token ids with soft attention on encoder outputs.

    Variants:
      lstm-lstm - LSTM encoder, LSTM decoder (the attention baseline).
      mem-lstm  - slot-memory encoder; same LSTM decoder over its outputs.
      mem-mem   - slot-memory encoder AND decoder; the decoder's memory IS
                  the encoder's final memory object, so decoder writes land
                  in the same slots later decoder reads see.

    The output layer maps [decoder output; attention context] to target
    vocabulary logits. Decoding is greedy on purpose.
    """

    VARIANTS = ("lstm-lstm", "mem-lstm", "mem-mem")

    def __init__(
        self,
        name: str,
        dim: int,
        tgt_vocab: int,
        variant: str = "mem-mem",
        compose_hidden: Sequence[int] = (),
        layers: int = 1,
        dropout_read: float = 0.0,
        dropout_write: float = 0.0,
    ):
        if variant not in self.VARIANTS:
            raise ConfigError(f"{name}: unknown variant {variant!r}, pick from {self.VARIANTS}")
        if tgt_vocab < 2:
            raise ConfigError(f"{name}: target vocabulary too small: {tgt_vocab}")
        self.name = name
        self.dim = dim
        self.variant = variant
        self.tgt_vocab = tgt_vocab
        cfg = lambda aux: _encoder_cfg(dim, aux, compose_hidden, layers, dropout_read, dropout_write)
        if variant == "lstm-lstm":
            self.enc_lstm = LstmStack(f"{name}/enc", dim, dim, layers)
        else:
            self.enc = SlotEncoder(f"{name}/enc", cfg(0))
        if variant == "mem-mem":
            self.dec = SlotEncoder(f"{name}/dec", cfg(0))
        else:
            self.dec_lstm = LstmStack(f"{name}/dec", dim, dim, layers)
        self.tgt_embed_name = f"{name}/tgt_emb"
        self.tgt_embed: Tensor | None = None
        self.out = Linear(f"{name}/out", 2 * dim, tgt_vocab)

    def register(self, ps: ParameterSet) -> None:
        if self.variant == "lstm-lstm":
            self.enc_lstm.register(ps)
        else:
            self.enc.register(ps)
        if self.variant == "mem-mem":
            self.dec.register(ps)
        else:
            self.dec_lstm.register(ps)
        self.tgt_embed = ps.weight(self.tgt_embed_name, (self.tgt_vocab, self.dim))
        self.out.register(ps)

    def encode_source(self, source: Sequence[Tensor], rng=None, train: bool = False):
        source = list(source)
        if not source:
            raise InputError("source sentence is empty")
        if self.variant == "lstm-lstm":
            outputs = []
            states = self.enc_lstm.zero_state(source[0].dtype)
            for x in source:
                h, states = self.enc_lstm.step(x, states)
                outputs.append(h)
            return outputs, None
        res = encode_sequence(self.enc, source, rng=rng, train=train)
        return res.outputs, res.memory


    def decoder_start(self, memory: Memory | None, dtype) -> EncoderState | list:
        if self.variant == "mem-mem":
            # shared by reference: the decoder state holds the very Memory
            # object the encoder finished with
            return self.dec.init_state(memory, dtype=dtype)
        return self.dec_lstm.zero_state(dtype)

    def _embed_target(self, token_id: int) -> Tensor:
        if not (0 <= token_id < self.tgt_vocab):
            raise VocabularyError(f"target token id {token_id} outside vocabulary of {self.tgt_vocab}")
        return take_row(self.tgt_embed, token_id)

    def _decode_one(self, state, x: Tensor, enc_outputs, rng, train):
        if self.variant == "mem-mem":
            state, h = encode_step(state, x, rng=rng, train=train)
        else:
            h, state = self.dec_lstm.step(x, state)
        ctx = attention_blend(h, enc_outputs)
        logits = self.out.apply(concat([h, ctx]))
        return state, logits

    def teacher_logits(
        self,
        source: Sequence[Tensor],
        target_ids: Sequence[int],
        begin_id: int,
        rng=None,
        train: bool = False,
    ) -> list[Tensor]:
        """One logit vector per target position, teacher-forced on the gold prefix."""
        target_ids = list(target_ids)
        if not target_ids:
            raise InputError("target sequence is empty")
        for tok in target_ids:
            if not (0 <= tok < self.tgt_vocab):
                raise VocabularyError(f"target token id {tok} outside vocabulary of {self.tgt_vocab}")
        enc_outputs, memory = self.encode_source(source, rng=rng, train=train)
        state = self.decoder_start(memory, enc_outputs[0].dtype)
        inputs = [begin_id] + target_ids[:-1]
        logits = []
        for tok in inputs:
            x = self._embed_target(tok)
            state, step_logits = self._decode_one(state, x, enc_outputs, rng, train)
            logits.append(step_logits)
        return logits

    def greedy(
        self,
        source: Sequence[Tensor],
        begin_id: int,
        end_id: int,
        max_len: int = 32,
    ) -> list[int]:
        """Greedy decoding: argmax token per step until the end marker."""
        with no_grad():
            enc_outputs, memory = self.encode_source(source)
            state = self.decoder_start(memory, enc_outputs[0].dtype)
            out: list[int] = []
            tok = begin_id
            for _ in range(max_len):
                x = self._embed_target(tok)
                state, logits = self._decode_one(state, x, enc_outputs, None, False)
                tok = int(np.argmax(logits.data))
                if tok == end_id:
                    break
                out.append(tok)
            return out


def seq2seq_translate(model: Translator, source, target_prefix, begin_id: int) -> list[Tensor]:
    """Next-token distribution per position, teacher-forced on target_prefix."""
    return [softmax(l) for l in model.teacher_logits(source, target_prefix, begin_id)]
