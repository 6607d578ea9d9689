import numpy as np
import numpy.testing as npt
import pytest

from slotenc.cells import ParameterSet
from slotenc.errors import ContractError, DimensionError, NumericError, TapeError
from slotenc import tensor as T
from slotenc.tensor import (
    Tape,
    Tensor,
    add,
    add_rows,
    absval,
    backward,
    concat,
    dropout,
    grad_check,
    matmul,
    matvec,
    mean_all,
    mul,
    mul_cols,
    narrow,
    neg,
    no_grad,
    outer,
    pick,
    relu,
    scale,
    sigmoid,
    softmax,
    square,
    stack_cols,
    sub,
    sum_all,
    take_row,
    tanh,
    vecmat,
)


# ---------------------------------------------------------------------------
# independent oracles, written before the ops they check


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def outer_oracle(u, v):
    out = np.zeros((u.size, v.size), dtype=u.dtype)
    for i in range(u.size):
        for j in range(v.size):
            out[i, j] = u[i] * v[j]
    return out


def softmax_oracle(v):
    e = [np.exp(np.float64(x)) for x in v]
    s = sum(e)
    return np.array([x / s for x in e])


def fd_max_err(build, leaves, eps=1e-5):
    """Worst relative error of analytic grads vs central differences.

    build takes the leaf tensors and returns a scalar Tensor; leaves are
    float64 Tensors with requires=True.
    """
    with Tape():
        out = build(*leaves)
        backward(out)
    worst = 0.0
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        grad = grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            with no_grad():
                hi = float(build(*leaves).data)
            flat[i] = saved - eps
            with no_grad():
                lo = float(build(*leaves).data)
            flat[i] = saved
            numeric = (hi - lo) / (2 * eps)
            err = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
        leaf.grad = None
    return worst


# ---------------------------------------------------------------------------
# forward values


def test_matmul_identity():
    a = Tensor(np.eye(2), dtype=np.float64)
    b = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), dtype=np.float64)
    npt.assert_array_equal(matmul(a, b).data, b.data)


def test_matmul_projector():
    p = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]), dtype=np.float64)
    b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]), dtype=np.float64)
    npt.assert_array_equal(matmul(p, b).data, np.array([[5.0, 6.0], [0.0, 0.0]]))


def test_matmul_against_triple_loop():
    # integer-valued entries keep every product and partial sum exact, so the
    # comparison against the reordered BLAS sum can demand bitwise equality
    rng = np.random.default_rng(0)
    a = Tensor(rng.integers(-9, 10, size=(3, 4)).astype(np.float64))
    b = Tensor(rng.integers(-9, 10, size=(4, 2)).astype(np.float64))
    npt.assert_array_equal(matmul(a, b).data, matmul_oracle(a.data, b.data))


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)), dtype=np.float64)
    b = Tensor(np.zeros((2, 3)), dtype=np.float64)
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(a, b)


def test_softmax_uniform():
    z = softmax(Tensor(np.zeros(4), dtype=np.float64))
    npt.assert_allclose(z.data, 0.25, rtol=0, atol=1e-12)


def test_softmax_shift_invariance():
    for c in (-100.0, 0.0, 3.5, 1e4):
        z = softmax(Tensor(np.array([c, c + np.log(3.0)]), dtype=np.float64))
        npt.assert_allclose(z.data, [0.25, 0.75], atol=1e-6)


def test_softmax_against_direct_formula():
    z = softmax(Tensor(np.array([1.0, 2.0, 3.0]), dtype=np.float64))
    npt.assert_allclose(z.data, softmax_oracle([1.0, 2.0, 3.0]), rtol=0, atol=1e-12)


def test_softmax_simplex_property():
    rng = np.random.default_rng(1)
    for _ in range(100):
        v = rng.standard_normal(rng.integers(1, 9)) * 10
        z = softmax(Tensor(v, dtype=np.float64)).data
        assert np.all(z >= 0)
        assert abs(z.sum() - 1.0) < 1e-6


def test_softmax_empty_rejected():
    with pytest.raises(DimensionError):
        softmax(Tensor(np.zeros(0), dtype=np.float64))


def test_outer_ones():
    r = outer(Tensor(np.ones(3), dtype=np.float64), Tensor(np.ones(2), dtype=np.float64))
    npt.assert_array_equal(r.data, np.ones((3, 2)))


def test_outer_basis():
    r = outer(
        Tensor(np.array([1.0, 0.0]), dtype=np.float64),
        Tensor(np.array([4.0, 5.0]), dtype=np.float64),
    )
    npt.assert_array_equal(r.data, np.array([[4.0, 5.0], [0.0, 0.0]]))


def test_outer_against_double_loop():
    rng = np.random.default_rng(2)
    u = Tensor(rng.standard_normal(4), dtype=np.float64)
    v = Tensor(rng.standard_normal(6), dtype=np.float64)
    npt.assert_array_equal(outer(u, v).data, outer_oracle(u.data, v.data))


def test_outer_rejects_matrices():
    with pytest.raises(DimensionError):
        outer(Tensor(np.zeros((2, 2)), dtype=np.float64), Tensor(np.zeros(2), dtype=np.float64))


def test_broadcast_ops_values():
    m = Tensor(np.arange(6.0).reshape(2, 3), dtype=np.float64)
    w = Tensor(np.array([1.0, 10.0, 100.0]), dtype=np.float64)
    npt.assert_array_equal(mul_cols(m, w).data, m.data * w.data[None, :])
    npt.assert_array_equal(add_rows(m, w).data, m.data + w.data[None, :])


# ---------------------------------------------------------------------------
# tape mechanics


def test_backward_sum_gives_ones():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires=True, dtype=np.float64)
    with Tape():
        backward(sum_all(x))
    npt.assert_array_equal(x.grad, np.ones(3))


def test_backward_scalar_product():
    x = Tensor(np.array(3.0), requires=True, dtype=np.float64)
    y = Tensor(np.array(4.0), requires=True, dtype=np.float64)
    with Tape():
        backward(mul(x, y))
    assert float(x.grad) == 4.0
    assert float(y.grad) == 3.0


def test_gradients_accumulate_across_uses():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(5)
    x = Tensor(a, requires=True, dtype=np.float64)
    w = Tensor(rng.standard_normal(5), dtype=np.float64)
    with Tape():
        backward(add(sum_all(mul(x, w)), sum_all(square(x))))
    x1 = Tensor(a, requires=True, dtype=np.float64)
    with Tape():
        backward(sum_all(mul(x1, w)))
    x2 = Tensor(a, requires=True, dtype=np.float64)
    with Tape():
        backward(sum_all(square(x2)))
    npt.assert_allclose(x.grad, x1.grad + x2.grad, rtol=0, atol=0)


def test_tape_records_are_topologically_ordered():
    x = Tensor(np.ones(3), requires=True, dtype=np.float64)
    y = Tensor(np.ones(3), requires=True, dtype=np.float64)
    with Tape() as tape:
        s = add(mul(x, y), tanh(x))
        sum_all(s)
    assert len(tape) == 4
    for rec in tape.records:
        assert all(i < rec.out_node for i in rec.in_nodes)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires=True, dtype=np.float64)
    with Tape() as tape:
        with no_grad():
            sum_all(mul(x, x))
    assert len(tape) == 0


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires=True, dtype=np.float64)
    with Tape():
        y = mul(x, x)
        with pytest.raises(ContractError):
            backward(y)


def test_backward_without_tape():
    x = Tensor(np.array(1.0), requires=True, dtype=np.float64)
    with pytest.raises(TapeError):
        backward(x)


def test_backward_detached_root():
    x = Tensor(np.ones(2), requires=True, dtype=np.float64)
    with Tape():
        old = sum_all(x)
    with Tape():
        with pytest.raises(TapeError):
            backward(old)


def test_dtype_mixing_rejected():
    a = Tensor(np.ones(2), dtype=np.float32)
    b = Tensor(np.ones(2), dtype=np.float64)
    with pytest.raises(ContractError):
        add(a, b)


def test_non_finite_forward_raises():
    big = Tensor(np.array([1e308]), dtype=np.float64)
    with pytest.raises(NumericError, match="mul"):
        mul(big, big)


# ---------------------------------------------------------------------------
# dropout


def test_dropout_eval_is_identity():
    x = Tensor(np.ones(100), dtype=np.float64)
    assert dropout(x, 0.5, None, train=False) is x
    assert dropout(x, 0.0, None, train=True) is x


def test_dropout_train_scales_survivors():
    x = Tensor(np.ones(1000), dtype=np.float64)
    y = dropout(x, 0.25, np.random.default_rng(4), train=True).data
    kept = y[y != 0]
    npt.assert_allclose(kept, 1.0 / 0.75)
    # zero fraction close to the rate
    assert abs((y == 0).mean() - 0.25) < 0.05


def test_dropout_deterministic_per_seed():
    x = Tensor(np.ones(64), dtype=np.float64)
    a = dropout(x, 0.5, np.random.default_rng(9), train=True).data
    b = dropout(x, 0.5, np.random.default_rng(9), train=True).data
    npt.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# finite-difference property, >=100 trials per differentiable op


def weighted(op_out):
    # fixed cotangent so the scalar loss is identical across the +/-eps evals
    if op_out.ndim == 0:
        return op_out
    w = Tensor(np.random.default_rng(99).standard_normal(op_out.shape), dtype=np.float64)
    return sum_all(mul(op_out, w))


OP_CASES = {
    "add": lambda rng: ([rng.standard_normal(4), rng.standard_normal(4)], lambda a, b: add(a, b)),
    "sub": lambda rng: ([rng.standard_normal(4), rng.standard_normal(4)], lambda a, b: sub(a, b)),
    "mul": lambda rng: ([rng.standard_normal(4), rng.standard_normal(4)], lambda a, b: mul(a, b)),
    "neg": lambda rng: ([rng.standard_normal(4)], lambda a: neg(a)),
    "scale": lambda rng: ([rng.standard_normal(4)], lambda a: scale(a, -2.5)),
    "matmul": lambda rng: (
        [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))],
        lambda a, b: matmul(a, b),
    ),
    "matvec": lambda rng: (
        [rng.standard_normal((3, 4)), rng.standard_normal(4)],
        lambda a, b: matvec(a, b),
    ),
    "vecmat": lambda rng: (
        [rng.standard_normal(3), rng.standard_normal((3, 4))],
        lambda a, b: vecmat(a, b),
    ),
    "outer": lambda rng: (
        [rng.standard_normal(3), rng.standard_normal(4)],
        lambda a, b: outer(a, b),
    ),
    "mul_cols": lambda rng: (
        [rng.standard_normal((3, 4)), rng.standard_normal(4)],
        lambda a, b: mul_cols(a, b),
    ),
    "add_rows": lambda rng: (
        [rng.standard_normal((3, 4)), rng.standard_normal(4)],
        lambda a, b: add_rows(a, b),
    ),
    "concat": lambda rng: (
        [rng.standard_normal(3), rng.standard_normal(2)],
        lambda a, b: concat([a, b]),
    ),
    "narrow": lambda rng: ([rng.standard_normal(6)], lambda a: narrow(a, 1, 4)),
    "pick": lambda rng: ([rng.standard_normal(5)], lambda a: pick(a, 2)),
    "take_row": lambda rng: ([rng.standard_normal((4, 3))], lambda a: take_row(a, 1)),
    "stack_cols": lambda rng: (
        [rng.standard_normal(3), rng.standard_normal(3)],
        lambda a, b: stack_cols([a, b]),
    ),
    "sum_all": lambda rng: ([rng.standard_normal((2, 3))], lambda a: sum_all(a)),
    "mean": lambda rng: ([rng.standard_normal((2, 3))], lambda a: mean_all(a)),
    "tanh": lambda rng: ([rng.standard_normal(5)], lambda a: tanh(a)),
    "sigmoid": lambda rng: ([rng.standard_normal(5)], lambda a: sigmoid(a)),
    # keep relu/abs inputs away from the kink at zero
    "relu": lambda rng: ([rng.standard_normal(5) + np.sign(rng.standard_normal(5)) * 0.2], lambda a: relu(a)),
    "absval": lambda rng: ([rng.standard_normal(5) + np.sign(rng.standard_normal(5)) * 0.2], lambda a: absval(a)),
    "square": lambda rng: ([rng.standard_normal(5)], lambda a: square(a)),
    "softmax": lambda rng: ([rng.standard_normal(5)], lambda a: softmax(a)),
    "dropout": lambda rng: (
        [rng.standard_normal(8)],
        lambda a: dropout(a, 0.5, np.random.default_rng(11), train=True),
    ),
}


@pytest.mark.parametrize("opname", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(opname):
    rng = np.random.default_rng(hash(opname) % (2**32))
    worst = 0.0
    for _ in range(100):
        arrays, fn = OP_CASES[opname](rng)
        leaves = [Tensor(a, requires=True, dtype=np.float64) for a in arrays]
        worst = max(worst, fd_max_err(lambda *ls: weighted(fn(*ls)), leaves))
    assert worst < 1e-6, f"{opname}: worst relative error {worst}"


# ---------------------------------------------------------------------------
# grad_check on whole functions of a ParameterSet


def test_grad_check_quadratic():
    ps = ParameterSet(seed=0, dtype=np.float64)
    ps.constant("w", np.random.default_rng(5).standard_normal(7))

    def f(params):
        return sum_all(square(params["w"]))

    assert grad_check(f, ps, eps=1e-4) < 1e-9


def test_grad_check_one_layer_softmax_xent():
    rng = np.random.default_rng(6)
    ps = ParameterSet(seed=0, dtype=np.float64)
    ps.constant("w", rng.standard_normal((3, 4)) * 0.3)
    ps.constant("b", rng.standard_normal(3) * 0.1)
    x = Tensor(rng.standard_normal(4), dtype=np.float64)
    gold = 1

    def f(params):
        logits = add(matvec(params["w"], x), params["b"])
        return neg(T.log(pick(softmax(logits), gold)))

    assert grad_check(f, ps, eps=1e-4) < 1e-6


def test_grad_check_rejects_float32():
    ps = ParameterSet(seed=0, dtype=np.float32)
    ps.constant("w", np.ones(3))
    with pytest.raises(ContractError):
        grad_check(lambda p: sum_all(p["w"]), ps)


def test_grad_check_reports_nonfinite_parameter():
    ps = ParameterSet(seed=0, dtype=np.float64)
    ps.constant("w", np.array([1e308, 1.0]))

    def f(params):
        return sum_all(mul(params["w"], params["w"]))

    with pytest.raises(NumericError, match=r"w\[0\]|mul"):
        grad_check(f, ps, eps=1e-4)
