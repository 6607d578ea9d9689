"""Loading fixed word vectors from the whitespace text format.

One token per line followed by its numbers.  The loader checks every line
against the expected dimension and reports problems by line number, which
is the difference between a ten-second fix and grepping a million-line
file.
"""

import os
import tempfile

import numpy as np

from slotenc.data import load_embeddings
from slotenc.errors import FormatError

workdir = tempfile.mkdtemp()
path = os.path.join(workdir, "vectors.txt")

rng = np.random.default_rng(0)
with open(path, "w") as fh:
    for word in ["sun", "moon", "tide", "cliff", "harbor"]:
        nums = " ".join(f"{x:.4f}" for x in rng.standard_normal(8))
        fh.write(f"{word} {nums}\n")

table = load_embeddings(path, expected_k=8)
print("sun   :", table.vector("sun")[:4], "...")
print("moon  :", table.vector("moon")[:4], "...")

# out-of-vocabulary tokens read as zero vectors, never a KeyError
print("quasar:", table.vector("quasar"))

# a ragged line fails fast, with its 1-based line number
bad = os.path.join(workdir, "ragged.txt")
with open(bad, "w") as fh:
    fh.write("sun " + " ".join(["0.1"] * 8) + "\n")
    fh.write("moon 0.2 0.3\n")

try:
    load_embeddings(bad, expected_k=8)
except FormatError as err:
    print("rejected:", err)
