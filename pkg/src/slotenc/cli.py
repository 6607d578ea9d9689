"""Command line: train, eval, trace, translate, gradcheck, synth.

Exit codes: 0 success, 1 runtime failure (bad data, shape clash, numeric
trouble), 2 usage (unknown command, missing required flag).  Every file a
command writes is a deterministic function of (checkpoint, input, flags,
seed).
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

from .cells import load_checkpoint, save_checkpoint
from .checks import BOUND, CASES, max_error, run_checks
from .data import SYNTHETIC_TASKS, gen_synthetic, write_labeled, write_pairs
from .encoder import encode_sequence, format_trace
from .errors import ConfigError, InputError, SlotencError
from .introspect import build_graph, dump_memory_states, emit_dot
from .tasks import TranslateTask, task_from_config
from .tensor import no_grad
from .train import fit, load_config, parse_bool, config_value

TRACE_FILE = "trace.txt"
DOT_FILE = "graph.dot"
TABLE_FILE = "memory.txt"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "model.ckpt"
HYPOTHESES_FILE = "hypotheses.txt"
PREDICTIONS_FILE = "predictions.txt"
SOURCE_TRACES_FILE = "traces.txt"


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_task(args):
    """Config plus command-line overrides -> (task, train, dev, tcfg)."""
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "precision", None):
        cfg["precision"] = args.precision
    base = os.path.dirname(os.path.abspath(args.config))
    return task_from_config(cfg, base_dir=base), cfg


def _sequence_encoder(task):
    """The task's slot encoder for plain token sequences."""
    model = task.model
    for attr in ("enc", "enc_first", "enc_answer", "sent_enc"):
        enc = getattr(model, attr, None)
        if enc is not None:
            return enc
    raise ConfigError("this task variant keeps no slot memory; nothing to trace")


def cmd_train(args) -> int:
    (task, train_rows, dev_rows, tcfg), _ = _load_task(args)
    if tcfg.precision == "f64":
        # fail before the fit, not after: checkpoints hold float32
        raise ConfigError(
            "checkpoints store float32 parameters; train at f32 (f64 is for gradcheck and diagnostics)"
        )
    os.makedirs(args.out, exist_ok=True)
    fit(
        task,
        train_rows,
        dev_rows,
        tcfg,
        metrics_path=os.path.join(args.out, METRICS_FILE),
        echo=print,
    )
    save_checkpoint(task.params, os.path.join(args.out, CHECKPOINT_FILE))
    return 0


def cmd_eval(args) -> int:
    (task, train_rows, dev_rows, _), _ = _load_task(args)
    load_checkpoint(task.params, args.checkpoint)
    rows = dev_rows if dev_rows else train_rows
    loss, acc = task.evaluate(rows)
    print(f"loss {loss:.6f} accuracy {acc:.6f} ({len(rows)} examples)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        lines = task.predict_lines(rows)
        _write(os.path.join(args.out, PREDICTIONS_FILE), "\n".join(lines) + "\n")
    return 0


def cmd_trace(args) -> int:
    (task, _, _, _), cfg = _load_task(args)
    if args.checkpoint:
        load_checkpoint(task.params, args.checkpoint)
    tokens = args.text.split()
    if not tokens:
        raise InputError("no tokens in the given text")
    if config_value(cfg, "lowercase", parse_bool, default=False):
        tokens = [t.lower() for t in tokens]
    enc = _sequence_encoder(task)
    with no_grad():
        res = encode_sequence(enc, task.source.tensors(tokens), trace=True, tokens=tokens)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, TRACE_FILE), format_trace(res.trace))
    graph = build_graph(res.trace, self_mask=args.self_mask)
    _write(os.path.join(args.out, DOT_FILE), emit_dot(graph))
    _write(os.path.join(args.out, TABLE_FILE), dump_memory_states(res.trace))
    print(f"wrote {TRACE_FILE}, {DOT_FILE}, {TABLE_FILE} to {args.out}")
    return 0


def cmd_translate(args) -> int:
    (task, train_rows, dev_rows, _), _ = _load_task(args)
    if not isinstance(task, TranslateTask):
        raise ConfigError("translate needs a config with task=translate")
    load_checkpoint(task.params, args.checkpoint)
    rows = dev_rows if dev_rows else train_rows
    os.makedirs(args.out, exist_ok=True)
    lines = task.translate_lines(rows)
    _write(os.path.join(args.out, HYPOTHESES_FILE), "\n".join(lines) + "\n")
    if args.trace:
        enc = _sequence_encoder(task)
        chunks = []
        with no_grad():
            for src, _, _ in rows:
                res = encode_sequence(enc, task.source.tensors(src), trace=True, tokens=src)
                chunks.append(format_trace(res.trace))
        _write(os.path.join(args.out, SOURCE_TRACES_FILE), "\n".join(chunks))
    print(f"wrote {len(lines)} hypotheses to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_checks(args.cases or None)
    for r in results:
        print(f"{r.name}: {r.error:.3e} ({r.seconds:.1f}s)")
    worst = max_error(results)
    print(f"max relative error {worst:.6e}")
    return 0 if worst < BOUND else 1


def cmd_synth(args) -> int:
    sizes = {
        "n": args.n,
        "vocab": args.vocab,
        "min_len": args.min_len,
        "max_len": args.max_len,
        "pairs": args.pairs,
    }
    rows = gen_synthetic(args.task, sizes, args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.task}.tsv")
    if args.task in ("copy", "reverse"):
        write_pairs(path, [(src, tgt, "-") for src, tgt in rows])
    elif args.task == "associative-recall":
        write_labeled(path, rows)
    else:
        write_pairs(path, rows)
    print(path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotenc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, out=False, checkpoint=False, seed=False, precision=False):
        if config:
            p.add_argument("--config", required=True, help="task config file")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="saved parameters")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if precision:
            p.add_argument("--precision", choices=("f32", "f64"), default=None)

    p = sub.add_parser("train", help="fit a task from a config, write checkpoint + metrics")
    common(p, out=True, seed=True, precision=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="load a checkpoint and report loss/accuracy")
    common(p, checkpoint=True, precision=True)
    p.add_argument("--out", default=None, help="also write per-example predictions here")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("trace", help="encode text; write trace, DOT graph, memory table")
    p.add_argument("text", help="whitespace-tokenized input sentence")
    common(p, out=True, seed=True, precision=True)
    p.add_argument("--checkpoint", default=None, help="saved parameters (fresh init if absent)")
    p.add_argument("--self-mask", action="store_true", help="redirect self-edges to the second-best slot")
    p.set_defaults(handler=cmd_trace)

    p = sub.add_parser("translate", help="greedy-decode the config's dataset to a file")
    common(p, out=True, checkpoint=True, precision=True)
    p.add_argument("--trace", action="store_true", help="also write source-side traces")
    p.set_defaults(handler=cmd_translate)

    p = sub.add_parser("gradcheck", help="64-bit finite-difference suite")
    p.add_argument("cases", nargs="*", choices=[[], *CASES], help="subset of checks to run")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("synth", help="materialize a synthetic dataset as TSV")
    p.add_argument("task", choices=SYNTHETIC_TASKS)
    p.add_argument("--n", type=int, default=100, help="number of examples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=10, help="symbol inventory size")
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--pairs", type=int, default=3, help="key/value pairs (associative-recall)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(handler=cmd_synth)

    return parser


def cli_run(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except SlotencError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_run(sys.argv[1:]))
