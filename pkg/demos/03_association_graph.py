"""Word-association graphs from encoder traces.

Each encoding step touches one slot hardest; drawing an edge from the
current token to that slot's seed token gives a graph of what the encoder
looked at while reading.  The self-mask variant suppresses the trivial
"token attends to its own slot" edges and shows the runner-up instead.
"""

import numpy as np

from slotenc.cells import ParameterSet
from slotenc.encoder import EncoderConfig, SlotEncoder, encode_sequence
from slotenc.introspect import build_graph, emit_dot
from slotenc.tensor import Tensor, no_grad

tokens = "the cat sat on the mat".split()
dim = 12

enc = SlotEncoder("demo", EncoderConfig(dim=dim))
ps = ParameterSet(seed=21)
enc.register(ps)

rng = np.random.default_rng(2)
with no_grad():
    vectors = [Tensor(rng.standard_normal(dim).astype(ps.dtype)) for _ in tokens]
    result = encode_sequence(enc, vectors, trace=True, tokens=tokens)

graph = build_graph(result.trace)
print("--- plain graph (duplicate tokens get @position suffixes) ---")
print(emit_dot(graph))

masked = build_graph(result.trace, self_mask=True)
print("--- self-masked graph ---")
print(emit_dot(masked))

moved = sum(1 for a, b in zip(graph.edges, masked.edges) if a.target != b.target)
print(f"self-mask redirected {moved} of {len(graph.edges)} edges")

# pipe either text through `dot -Tsvg` to render it
