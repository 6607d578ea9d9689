"""Tape-based reverse-mode differentiation, from the ground up.

Every model in this package is built from the same small Tensor type: a
numpy array plus a gradient slot, with every operation recorded on a tape
so backward() can replay it in reverse.  This script differentiates a tiny
expression by hand-checkable steps, then confirms the machinery against
central finite differences.
"""

import numpy as np

from slotenc.cells import ParameterSet
from slotenc.tensor import (
    Tape,
    Tensor,
    backward,
    concat,
    grad_check,
    matvec,
    scale,
    sigmoid,
    sum_all,
    tanh,
)

# --- a scalar chain first ---------------------------------------------------

with Tape():
    x = Tensor(np.array([0.3, -1.2, 0.8]), requires=True)
    y = sum_all(tanh(x) * x)
    backward(y)

# d/dx [x tanh x] = tanh x + x (1 - tanh^2 x)
manual = np.tanh(x.data) + x.data * (1.0 - np.tanh(x.data) ** 2)
print("autodiff  :", x.grad)
print("by hand   :", manual)
print("agreement :", np.max(np.abs(x.grad - manual)))

# --- the same tape drives whole parameter sets -------------------------------

ps = ParameterSet(seed=0, dtype=np.float64)
w = ps.weight("demo/w", (4, 6))
b = ps.bias("demo/b", 4)


def loss_fn(ps):
    v = Tensor(np.linspace(-1.0, 1.0, 6))
    out = sigmoid(matvec(ps["demo/w"], v) + ps["demo/b"])
    return sum_all(out * out)


worst = grad_check(loss_fn, ps, eps=1e-4)
print(f"\nfinite-difference check over {len(ps)} tensors")
print(f"max relative error: {worst:.3e}")
assert worst < 1e-4

# concat participates in the tape like everything else
with Tape():
    a = Tensor(np.ones(2), requires=True)
    c = Tensor(np.full(3, 2.0), requires=True)
    backward(sum_all(scale(concat([a, c]), 3.0)))
print("\nconcat splits gradients back:", a.grad, c.grad)
