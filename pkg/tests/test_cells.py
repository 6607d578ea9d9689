import numpy as np
import numpy.testing as npt
import pytest

from slotenc.cells import (
    Linear,
    LstmCell,
    LstmStack,
    MlpComposer,
    ParameterSet,
    glorot_scale,
    init_params,
    load_checkpoint,
    lstm_step,
    mlp_compose,
    read_checkpoint,
    save_checkpoint,
)
from slotenc.errors import ConfigError, DimensionError, FormatError, InputError, StateError
from slotenc.tensor import Tensor, grad_check, mul, sum_all


def lstm_oracle(wx, wh, b, x, h, c):
    """Straight-line recurrence on raw arrays; same fused gate layout."""
    hs = h.size
    pre = wx @ x + wh @ h + b
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))
    gi = sig(pre[:hs])
    gf = sig(pre[hs : 2 * hs])
    cand = np.tanh(pre[2 * hs : 3 * hs])
    go = sig(pre[3 * hs :])
    c2 = gf * c + gi * cand
    return go * np.tanh(c2), c2


def make_cell(seed, in_size=5, hidden=4, dtype=np.float64):
    cell = LstmCell("cell", in_size, hidden)
    ps = init_params([cell], seed=seed, dtype=dtype)
    return cell, ps


def test_zeroed_cell_emits_zero():
    cell, ps = make_cell(0)
    for _, t in ps.items():
        t.data[...] = 0.0
    x = Tensor(np.ones(5), dtype=np.float64)
    h, c = lstm_step(cell, x, cell.zero_state())
    npt.assert_array_equal(h.data, np.zeros(4))


def test_saturated_forget_gate_carries_cell_state():
    rng = np.random.default_rng(1)
    cell, ps = make_cell(1)
    for name, t in ps.items():
        if name.endswith("/b"):
            t.data[...] = 0.0
            t.data[:4] = -20.0    # input gate shut
            t.data[4:8] = 20.0    # forget gate open
        else:
            t.data *= 0.01
    x = Tensor(rng.standard_normal(5), dtype=np.float64)
    c0 = Tensor(rng.standard_normal(4), dtype=np.float64)
    h0 = Tensor(rng.standard_normal(4), dtype=np.float64)
    _, c1 = lstm_step(cell, x, (h0, c0))
    npt.assert_allclose(c1.data, c0.data, atol=1e-6)


def test_cell_matches_straight_line_oracle():
    rng = np.random.default_rng(2)
    cell, ps = make_cell(2)
    x = Tensor(rng.standard_normal(5), dtype=np.float64)
    h0 = Tensor(rng.standard_normal(4), dtype=np.float64)
    c0 = Tensor(rng.standard_normal(4), dtype=np.float64)
    h1, c1 = lstm_step(cell, x, (h0, c0))
    eh, ec = lstm_oracle(
        ps["cell/wx"].data, ps["cell/wh"].data, ps["cell/b"].data, x.data, h0.data, c0.data
    )
    npt.assert_allclose(h1.data, eh, rtol=0, atol=1e-12)
    npt.assert_allclose(c1.data, ec, rtol=0, atol=1e-12)


def test_forget_bias_initialized_to_one():
    cell, ps = make_cell(3, hidden=6)
    b = ps["cell/b"].data
    npt.assert_array_equal(b[6:12], np.ones(6))
    npt.assert_array_equal(b[:6], np.zeros(6))
    npt.assert_array_equal(b[12:], np.zeros(12))


def test_lstm_gradients_on_random_8_unit_cells():
    for seed in (0, 1, 2):
        cell = LstmCell("cell", 5, 8)
        ps = init_params([cell], seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed + 100)
        x = Tensor(rng.standard_normal(5), dtype=np.float64)
        h0 = Tensor(rng.standard_normal(8), dtype=np.float64)
        c0 = Tensor(rng.standard_normal(8), dtype=np.float64)
        wh = Tensor(rng.standard_normal(8), dtype=np.float64)
        wc = Tensor(rng.standard_normal(8), dtype=np.float64)

        def f(params):
            h1, c1 = lstm_step(cell, x, (h0, c0))
            return sum_all(mul(h1, wh)) + sum_all(mul(c1, wc))

        assert grad_check(f, ps, eps=1e-4) < 1e-6


def test_cell_shape_errors():
    cell, _ = make_cell(4)
    with pytest.raises(DimensionError):
        lstm_step(cell, Tensor(np.zeros(3), dtype=np.float64), cell.zero_state())
    h, c = cell.zero_state()
    with pytest.raises(DimensionError):
        lstm_step(cell, Tensor(np.zeros(5), dtype=np.float64), (h, Tensor(np.zeros(9), dtype=np.float64)))


def test_cell_before_register():
    cell = LstmCell("cell", 3, 3)
    with pytest.raises(StateError):
        cell.step(Tensor(np.zeros(3), dtype=np.float64), (Tensor(np.zeros(3)), Tensor(np.zeros(3))))


def test_stack_feeds_layers_upward():
    stack = LstmStack("enc", 3, 4, layers=2)
    ps = init_params([stack], seed=5, dtype=np.float64)
    x = Tensor(np.random.default_rng(5).standard_normal(3), dtype=np.float64)
    out, states = stack.step(x, stack.zero_state())
    assert out.shape == (4,)
    assert len(states) == 2
    # top output is the second layer run on the first layer's hidden state
    h0, _ = stack.cells[0].step(x, stack.cells[0].zero_state())
    expect, _ = stack.cells[1].step(h0, stack.cells[1].zero_state())
    npt.assert_allclose(out.data, expect.data, rtol=0, atol=0)


# ---------------------------------------------------------------------------
# composer


def test_composer_zero_weights_zero_output():
    comp = MlpComposer("comp", (3, 4), 5)
    ps = init_params([comp], seed=6, dtype=np.float64)
    for _, t in ps.items():
        t.data[...] = 0.0
    out = mlp_compose(comp, [Tensor(np.ones(3), dtype=np.float64), Tensor(np.ones(4), dtype=np.float64)])
    npt.assert_array_equal(out.data, np.zeros(5))


def test_composer_identity_block():
    comp = MlpComposer("comp", (4, 4), 4)
    ps = init_params([comp], seed=7, dtype=np.float64)
    ps["comp/w0.0"].data[...] = np.eye(4)
    ps["comp/w0.1"].data[...] = 0.0
    ps["comp/b0"].data[...] = 0.0
    u = np.array([1.0, -2.0, 0.5, -0.1])
    out = mlp_compose(comp, [Tensor(u, dtype=np.float64), Tensor(np.zeros(4), dtype=np.float64)])
    npt.assert_array_equal(out.data, np.maximum(u, 0.0))


def test_composer_matches_concat_affine_oracle():
    rng = np.random.default_rng(8)
    comp = MlpComposer("comp", (3, 5), 4)
    ps = init_params([comp], seed=8, dtype=np.float64)
    a = rng.standard_normal(3)
    b = rng.standard_normal(5)
    out = mlp_compose(comp, [Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)])
    full = np.hstack([ps["comp/w0.0"].data, ps["comp/w0.1"].data])
    expect = np.maximum(full @ np.concatenate([a, b]) + ps["comp/b0"].data, 0.0)
    npt.assert_allclose(out.data, expect, rtol=0, atol=1e-12)


def test_composer_arity_enforced():
    comp = MlpComposer("comp", (3, 3), 3)
    init_params([comp], seed=9, dtype=np.float64)
    with pytest.raises(ConfigError):
        mlp_compose(comp, [Tensor(np.zeros(3), dtype=np.float64)])


def test_composer_zero_third_block_reduces_to_arity_two():
    rng = np.random.default_rng(10)
    two = MlpComposer("two", (4, 4), 6)
    three = MlpComposer("three", (4, 4, 4), 6)
    ps2 = init_params([two], seed=11, dtype=np.float64)
    ps3 = init_params([three], seed=12, dtype=np.float64)
    ps3["three/w0.0"].data[...] = ps2["two/w0.0"].data
    ps3["three/w0.1"].data[...] = ps2["two/w0.1"].data
    ps3["three/w0.2"].data[...] = 0.0
    ps3["three/b0"].data[...] = ps2["two/b0"].data
    u = Tensor(rng.standard_normal(4), dtype=np.float64)
    v = Tensor(rng.standard_normal(4), dtype=np.float64)
    w = Tensor(rng.standard_normal(4), dtype=np.float64)
    npt.assert_array_equal(
        mlp_compose(three, [u, v, w]).data,
        mlp_compose(two, [u, v]).data,
    )


def test_composer_hidden_layers_shapes():
    comp = MlpComposer("comp", (3, 3), 5, hidden=(7,))
    ps = init_params([comp], seed=13, dtype=np.float64)
    assert ps["comp/w0.0"].shape == (7, 3)
    assert ps["comp/w1"].shape == (5, 7)
    out = mlp_compose(comp, [Tensor(np.ones(3), dtype=np.float64), Tensor(np.ones(3), dtype=np.float64)])
    assert out.shape == (5,)


# ---------------------------------------------------------------------------
# initialization


def test_init_params_deterministic_per_seed():
    a = init_params([LstmCell("c", 4, 4), MlpComposer("m", (4, 4), 4)], seed=42)
    b = init_params([LstmCell("c", 4, 4), MlpComposer("m", (4, 4), 4)], seed=42)
    assert a.names() == b.names()
    for name in a.names():
        npt.assert_array_equal(a[name].data, b[name].data)


def test_init_params_seed_changes_values():
    a = init_params([LstmCell("c", 4, 4)], seed=0)
    b = init_params([LstmCell("c", 4, 4)], seed=1)
    assert any(not np.array_equal(a[n].data, b[n].data) for n in a.names())


def test_glorot_scale_closed_form():
    assert abs(glorot_scale(300, 300) - np.sqrt(6.0 / 600.0)) < 1e-6


def test_bad_sizes_rejected():
    with pytest.raises(ConfigError):
        LstmCell("c", 0, 4)
    with pytest.raises(ConfigError):
        MlpComposer("m", (3, -1), 4)
    with pytest.raises(ConfigError):
        Linear("l", 3, 0)
    ps = ParameterSet()
    with pytest.raises(ConfigError):
        ps.bias("b", 0)


def test_duplicate_and_reserved_names_rejected():
    ps = ParameterSet()
    ps.bias("b", 3)
    with pytest.raises(ConfigError):
        ps.bias("b", 3)
    with pytest.raises(ConfigError):
        ps.bias("b#m", 3)


def test_decay_marks_weights_not_biases():
    lin = Linear("l", 3, 2)
    ps = init_params([lin], seed=0)
    assert ps.decays("l/w")
    assert not ps.decays("l/b")


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_is_value_exact(tmp_path):
    cell = LstmCell("c", 3, 4)
    ps = init_params([cell], seed=14, dtype=np.float32)
    ps.moment1["c/wx"] = np.full_like(ps["c/wx"].data, 0.25)
    ps.moment2["c/wx"] = np.full_like(ps["c/wx"].data, 0.5)
    ps.step = 7
    path = tmp_path / "model.ckpt"
    save_checkpoint(ps, path)

    fresh = init_params([LstmCell("c", 3, 4)], seed=99, dtype=np.float32)
    load_checkpoint(fresh, path)
    for name in ps.names():
        npt.assert_array_equal(fresh[name].data, ps[name].data)
    npt.assert_array_equal(fresh.moment1["c/wx"], ps.moment1["c/wx"])
    npt.assert_array_equal(fresh.moment2["c/wx"], ps.moment2["c/wx"])
    assert fresh.step == 7


def test_checkpoint_rejects_float64_set(tmp_path):
    ps = init_params([Linear("l", 2, 2)], seed=0, dtype=np.float64)
    with pytest.raises(ConfigError):
        save_checkpoint(ps, tmp_path / "x.ckpt")


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        read_checkpoint(path)


def test_checkpoint_truncation(tmp_path):
    ps = init_params([Linear("l", 4, 4)], seed=0, dtype=np.float32)
    path = tmp_path / "x.ckpt"
    save_checkpoint(ps, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(FormatError, match="truncated"):
        read_checkpoint(path)


def test_checkpoint_name_mismatch(tmp_path):
    ps = init_params([Linear("l", 2, 2)], seed=0, dtype=np.float32)
    path = tmp_path / "x.ckpt"
    save_checkpoint(ps, path)
    other = init_params([Linear("other", 2, 2)], seed=0, dtype=np.float32)
    with pytest.raises(InputError):
        load_checkpoint(other, path)


def test_checkpoint_shape_mismatch(tmp_path):
    ps = init_params([Linear("l", 2, 2)], seed=0, dtype=np.float32)
    path = tmp_path / "x.ckpt"
    save_checkpoint(ps, path)
    other = init_params([Linear("l", 2, 3)], seed=0, dtype=np.float32)
    with pytest.raises(DimensionError):
        load_checkpoint(other, path)


def test_checkpoint_files_are_deterministic(tmp_path):
    ps = init_params([LstmCell("c", 3, 3)], seed=21, dtype=np.float32)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(ps, p1)
    save_checkpoint(ps, p2)
    assert p1.read_bytes() == p2.read_bytes()
