"""Named 64-bit finite-difference checks behind the `gradcheck` command.

Every case builds a small frozen-seed model, returns a scalar loss
closure, and is verified with central differences at eps = 1e-4.  The
seeds matter: an unlucky weight draw can leave some coordinate with a
gradient around 1e-9, where the difference quotient is pure roundoff and
no tolerance can be certified.  Each frozen pair below was picked so all
coordinates sit comfortably above that floor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cells import ParameterSet
from .encoder import EncoderConfig, SlotEncoder, encode_step, init_memory
from .errors import InputError
from .heads import (
    DocumentClassifier,
    PairClassifier,
    QaScorer,
    SentenceClassifier,
    Translator,
)
from .tensor import Tensor, add, grad_check, log, neg, pick, softmax, sum_all

BOUND = 1e-4
EPS = 1e-4

Case = Callable[[], tuple[Callable[[ParameterSet], Tensor], ParameterSet]]


def _vecs(rng, n: int, k: int) -> list[Tensor]:
    return [Tensor(rng.standard_normal(k), dtype=np.float64) for _ in range(n)]


def _case_encoder_step() -> tuple[Callable, ParameterSet]:
    # The raw read/attend/compose/write/update path: 8-wide slots, five of
    # them, three consecutive steps.  The loss sums the step outputs and
    # the final memory so both write routes get exercised.
    enc = SlotEncoder("core", EncoderConfig(dim=8))
    ps = ParameterSet(seed=31, dtype=np.float64)
    enc.register(ps)
    rng = np.random.default_rng(30)
    slot_vecs = _vecs(rng, 5, 8)
    step_vecs = _vecs(rng, 3, 8)

    def f(params):
        state = enc.init_state(init_memory(slot_vecs))
        total = None
        for x in step_vecs:
            state, h = encode_step(state, x)
            total = sum_all(h) if total is None else add(total, sum_all(h))
        return add(total, sum_all(state.memory.slots))

    return f, ps


def _case_pair_basic() -> tuple[Callable, ParameterSet]:
    model = PairClassifier("nli", dim=5, hidden=7, classes=3)
    ps = ParameterSet(seed=25, dtype=np.float64)
    model.register(ps)
    rng = np.random.default_rng(24)
    premise, hypothesis = _vecs(rng, 3, 5), _vecs(rng, 2, 5)

    def f(params):
        return neg(log(pick(model.classify(premise, hypothesis), 1)))

    return f, ps


def _case_pair_aux_attn() -> tuple[Callable, ParameterSet]:
    model = PairClassifier("nli", dim=4, hidden=5, classes=3, variant="aux-attn")
    ps = ParameterSet(seed=1, dtype=np.float64)
    model.register(ps)
    rng = np.random.default_rng(2)
    premise, hypothesis = _vecs(rng, 3, 4), _vecs(rng, 2, 4)

    def f(params):
        return neg(log(pick(model.classify(premise, hypothesis), 2)))

    return f, ps


def _case_qa() -> tuple[Callable, ParameterSet]:
    model = QaScorer("qa", dim=4, hidden=6)
    ps = ParameterSet(seed=27, dtype=np.float64)
    model.register(ps)
    rng = np.random.default_rng(26)
    question, answer = _vecs(rng, 3, 4), _vecs(rng, 2, 4)

    def f(params):
        return neg(log(model.score(question, answer)))

    return f, ps


def _case_sentence() -> tuple[Callable, ParameterSet]:
    model = SentenceClassifier("cls", dim=4, hidden=6, classes=3)
    ps = ParameterSet(seed=33, dtype=np.float64)
    model.register(ps)
    rng = np.random.default_rng(32)
    sent = _vecs(rng, 3, 4)

    def f(params):
        return neg(log(pick(model.classify(sent), 1)))

    return f, ps


def _case_document() -> tuple[Callable, ParameterSet]:
    model = DocumentClassifier("doc", dim=3, classes=2, top="mem")
    ps = ParameterSet(seed=28, dtype=np.float64)
    model.register(ps)
    rng = np.random.default_rng(27)
    sents = [_vecs(rng, 3, 3) for _ in range(2)]

    def f(params):
        return neg(log(pick(model.classify(sents), 0)))

    return f, ps


def _case_translate() -> tuple[Callable, ParameterSet]:
    model = Translator("t", dim=4, tgt_vocab=5, variant="mem-mem")
    ps = ParameterSet(seed=29, dtype=np.float64)
    model.register(ps)
    rng = np.random.default_rng(28)
    src = _vecs(rng, 2, 4)
    gold = [2, 3]

    def f(params):
        logits = model.teacher_logits(src, gold, begin_id=1)
        total = None
        for l, g in zip(logits, gold):
            term = neg(log(pick(softmax(l), g)))
            total = term if total is None else add(total, term)
        return total

    return f, ps


CASES: dict[str, Case] = {
    "encoder-step": _case_encoder_step,
    "pair-basic": _case_pair_basic,
    "pair-aux-attn": _case_pair_aux_attn,
    "qa": _case_qa,
    "sentence": _case_sentence,
    "document": _case_document,
    "translate": _case_translate,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.error < BOUND


def run_checks(names: Sequence[str] | None = None, eps: float = EPS) -> list[CheckResult]:
    """Run the named cases (all by default) and report per-case errors."""
    picked = list(CASES) if names is None else list(names)
    for name in picked:
        if name not in CASES:
            raise InputError(f"unknown check {name!r}; have {', '.join(CASES)}")
    results = []
    for name in picked:
        f, ps = CASES[name]()
        start = time.perf_counter()
        err = grad_check(f, ps, eps=eps)
        results.append(CheckResult(name=name, error=float(err), seconds=time.perf_counter() - start))
    return results


def max_error(results: Sequence[CheckResult]) -> float:
    return max(r.error for r in results)
