"""Rendering of encoder traces: association graphs and composition tables.

A trace carries, per step, the input token, the key vector over slots, and
the argmax slot.  Because the memory is seeded one slot per token, slot j
is identified with input position j throughout; an edge from step t to
slot j therefore reads "while processing token t the encoder touched the
slot seeded by token j".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import TraceRecord
from .errors import InputError, StateError

__all__ = [
    "GraphEdge",
    "AssociationGraph",
    "build_graph",
    "emit_dot",
    "slot_expressions",
    "dump_memory_states",
]


@dataclass(frozen=True)
class GraphEdge:
    """One encoding step rendered as source position -> accessed slot.

    `fallback` marks the degenerate self-masked case where no second-best
    slot exists (single-slot memory); the target is then forced to 0.
    """

    source: int
    target: int
    fallback: bool = False


@dataclass
class AssociationGraph:
    tokens: list[str]
    edges: list[GraphEdge] = field(default_factory=list)

    def labels(self) -> list[str]:
        """Position-disambiguated node names, one per input token."""
        return [f"{tok}@{i}" for i, tok in enumerate(self.tokens)]


def _checked(trace: Sequence[TraceRecord]) -> tuple[list[TraceRecord], int]:
    records = list(trace)
    if not records:
        raise InputError("empty trace")
    slots = int(records[0].key.size)
    for r in records:
        if int(r.key.size) != slots:
            raise InputError(f"step {r.step}: key covers {int(r.key.size)} slots, expected {slots}")
        if not 0 <= int(r.argmax) < slots:
            raise InputError(f"step {r.step}: argmax {r.argmax} out of range for {slots} slots")
    if slots != len(records):
        # Slots must line up one-per-token or positions lose their meaning.
        raise InputError(f"trace has {len(records)} steps but the memory has {slots} slots")
    return records, slots


def build_graph(trace: Sequence[TraceRecord], self_mask: bool = False) -> AssociationGraph:
    """One edge per step, from the token's position to the argmax slot.

    With `self_mask` on, a step whose argmax is its own slot is redirected
    to the second-best slot instead: the stored one when the trace recorded
    it, otherwise recomputed from the key.  A single-slot memory has no
    second best; the edge then points at slot 0 and is flagged.
    """
    records, slots = _checked(trace)
    edges: list[GraphEdge] = []
    for i, r in enumerate(records):
        target = int(r.argmax)
        fallback = False
        if self_mask and target == i:
            if r.second is not None:
                target = int(r.second)
                if not 0 <= target < slots:
                    raise InputError(
                        f"step {r.step}: second-best {r.second} out of range for {slots} slots"
                    )
            elif slots == 1:
                target = 0
                fallback = True
            else:
                masked = r.key.astype(np.float64, copy=True)
                masked[i] = -np.inf
                target = int(np.argmax(masked))
        edges.append(GraphEdge(source=i, target=target, fallback=fallback))
    tokens = [r.token if r.token is not None else "?" for r in records]
    return AssociationGraph(tokens=tokens, edges=edges)


def _quoted(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_dot(graph: AssociationGraph) -> str:
    """DOT text for a graph: node lines in position order, then one edge
    line per step in step order.  Pure function of the graph, so equal
    graphs always render to identical bytes.
    """
    labels = graph.labels()
    for e in graph.edges:
        if not (0 <= e.source < len(labels) and 0 <= e.target < len(labels)):
            raise InputError(f"edge {e.source} -> {e.target} leaves the {len(labels)}-node graph")
    lines = ["digraph association {"]
    for label in labels:
        lines.append(f"    {_quoted(label)};")
    for e in graph.edges:
        attr = " [style=dashed]" if e.fallback else ""
        lines.append(f"    {_quoted(labels[e.source])} -> {_quoted(labels[e.target])}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def slot_expressions(trace: Sequence[TraceRecord]) -> list[list[str]]:
    """Composition expressions per slot, one row per memory state.

    Row 0 is the raw token list.  Each step nests the written slot:
    writing token w into the argmax slot j turns that slot's expression e
    into "(w e)", every other slot carries over.  Row t is the state after
    step t, so the result has len(trace) + 1 rows.
    """
    records = list(trace)
    if not records:
        raise StateError("empty trace: nothing to render")
    for r in records:
        if r.token is None:
            raise StateError(f"step {r.step}: no token recorded; composition lineage is required")
    records, _ = _checked(records)
    exprs = [str(r.token) for r in records]
    rows = [list(exprs)]
    for r in records:
        j = int(r.argmax)
        exprs[j] = f"({r.token} {exprs[j]})"
        rows.append(list(exprs))
    return rows


def dump_memory_states(trace: Sequence[TraceRecord]) -> str:
    """The full state-by-state table as text.

    One block per state: a "t=N" header (with the input token from step 1
    on), then one line per slot.  The slot written at that step is marked
    with a leading "*"; all other lines get a space so the expressions
    stay column-aligned.
    """
    records = list(trace)
    rows = slot_expressions(records)
    out = ["t=0"]
    out.extend(f"  {expr}" for expr in rows[0])
    for i, r in enumerate(records):
        out.append("")
        out.append(f"t={i + 1}  input: {r.token}")
        written = int(r.argmax)
        for j, expr in enumerate(rows[i + 1]):
            mark = "*" if j == written else " "
            out.append(f"{mark} {expr}")
    return "\n".join(out) + "\n"
