"""Tape and op-level checks for the autodiff core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gradcheck import check_scalar_fn, rel_err, tape_grads
from textrec.errors import ShapeError
from textrec import tensor as T
from textrec.tensor import Tape, Tensor


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- forward


def test_matmul_identity():
    a = rng(1).standard_normal((4, 4))
    out = Tensor(a, dtype=np.float64) @ Tensor(np.eye(4), dtype=np.float64)
    assert np.array_equal(out.data, a)


def test_matmul_hand_product():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), dtype=np.float64)
    b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]), dtype=np.float64)
    expect = np.array([[19.0, 22.0], [43.0, 50.0]])
    assert np.array_equal((a @ b).data, expect)


def test_elementwise_values():
    x = Tensor(np.array([1.0, -2.0, 0.0]), dtype=np.float64)
    y = Tensor(np.array([3.0, 0.5, -1.0]), dtype=np.float64)
    assert np.array_equal((x + y).data, [4.0, -1.5, -1.0])
    assert np.array_equal((x * y).data, [3.0, -1.0, 0.0])
    assert np.array_equal((x - y).data, [-2.0, -2.5, 1.0])
    assert np.array_equal(T.relu(x).data, [1.0, 0.0, 0.0])
    assert np.allclose(T.sigmoid(Tensor(np.array([0.0]), dtype=np.float64)).data, [0.5])


def test_sigmoid_extreme_inputs_saturate():
    x = Tensor(np.array([-1e4, -50.0, 50.0, 1e4]), dtype=np.float64)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        out = T.sigmoid(x).data
    assert np.all(out >= 0.0) and np.all(out <= 1.0)
    assert out[0] < 1e-20 and out[-1] > 1.0 - 1e-15


def test_reduction_values():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), dtype=np.float64)
    assert T.rsum(x).item() == 15.0
    assert T.rmean(x).item() == 2.5
    assert T.rmax(x).item() == 5.0
    assert np.array_equal(T.rsum(x, axis=0).data, [3.0, 5.0, 7.0])
    assert np.array_equal(T.rmean(x, axis=1, keepdims=True).data, [[1.0], [4.0]])


def test_split_concat_round_trip():
    x = Tensor(rng(2).standard_normal((1, 512)), dtype=np.float64)
    parts = T.split(x, 8, axis=-1)
    assert len(parts) == 8 and all(p.shape == (1, 64) for p in parts)
    back = T.concat(parts, axis=-1)
    assert np.array_equal(back.data, x.data)


def test_concat_then_split_other_axis():
    xs = [Tensor(rng(i).standard_normal((2, 3)), dtype=np.float64) for i in range(3)]
    cat = T.concat(xs, axis=0)
    assert cat.shape == (6, 3)
    parts = T.split(cat, 3, axis=0)
    for p, x in zip(parts, xs):
        assert np.array_equal(p.data, x.data)


def test_softmax_rows_sum_to_one():
    x = Tensor(rng(3).standard_normal((5, 7)) * 30.0, dtype=np.float64)
    s = T.softmax(x, axis=-1).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s >= 0.0)


# ---------------------------------------------------------------- backward


def test_sum_backward_is_ones():
    x = t64(rng(4).standard_normal((3, 5)))
    (g,) = tape_grads(lambda: T.rsum(x), [x])
    assert np.array_equal(g, np.ones((3, 5)))


def test_product_rule_backward():
    xv = rng(5).standard_normal((4,))
    yv = rng(6).standard_normal((4,))
    x, y = t64(xv), t64(yv)
    gx, gy = tape_grads(lambda: T.rsum(x * y), [x, y])
    assert np.allclose(gx, yv) and np.allclose(gy, xv)


def test_untouched_leaf_gets_zero_grad():
    x = t64(rng(7).standard_normal((2, 2)))
    unused = t64(rng(8).standard_normal((3,)))
    gx, gu = tape_grads(lambda: T.rsum(x * x), [x, unused])
    assert np.array_equal(gu, np.zeros(3))
    assert np.allclose(gx, 2 * x.data)


def test_reused_tensor_accumulates_grad():
    x = t64(np.array([1.5, -0.5]))
    (g,) = tape_grads(lambda: T.rsum((x * x) + x), [x])
    assert np.allclose(g, 2 * x.data + 1.0)


def test_matmul_grad_fd():
    a = t64(rng(9).standard_normal((3, 4)))
    b = t64(rng(10).standard_normal((4, 2)))
    check_scalar_fn(lambda: T.rsum(T.tanh(a @ b)), [a, b])


def test_batched_matmul_grad_fd():
    a = t64(rng(11).standard_normal((2, 3, 4)))
    b = t64(rng(12).standard_normal((4, 5)))  # broadcast over the batch axis
    check_scalar_fn(lambda: T.rsum((a @ b) * (a @ b)), [a, b])


def test_composite_sigmoid_matmul_fd():
    w = t64(rng(13).standard_normal((6, 3)))
    x = t64(rng(14).standard_normal((2, 6)))
    check_scalar_fn(lambda: T.rsum(T.sigmoid(x @ w)), [w, x])


def test_elementwise_chain_fd():
    x = t64(rng(15).standard_normal((5,)) * 0.5 + 1.5)  # keep log argument positive
    check_scalar_fn(lambda: T.rsum(T.log(x) * T.exp(x) + T.tanh(x)), [x])


def test_reduction_grads_fd():
    x = t64(rng(16).standard_normal((3, 4)))
    check_scalar_fn(lambda: T.rsum(T.rmean(x, axis=1) * T.rmean(x, axis=1)), [x])
    check_scalar_fn(lambda: T.rsum(T.rsum(x, axis=0, keepdims=True) * 0.5), [x])


def test_rmax_backward_splits_ties():
    x = t64(np.array([[1.0, 3.0, 3.0, 0.0]]))
    (g,) = tape_grads(lambda: T.rsum(T.rmax(x, axis=1)), [x])
    assert np.allclose(g, [[0.0, 0.5, 0.5, 0.0]])


def test_split_concat_grads_fd():
    x = t64(rng(17).standard_normal((2, 8)))

    def f():
        parts = T.split(x, 4, axis=-1)
        mixed = T.concat([parts[3], parts[1]], axis=-1)
        return T.rsum(mixed * mixed) + T.rsum(parts[0])

    check_scalar_fn(f, [x])


def test_softmax_grad_fd():
    x = t64(rng(18).standard_normal((3, 5)))
    w = t64(rng(19).standard_normal((3, 5)))
    check_scalar_fn(lambda: T.rsum(T.softmax(x, axis=-1) * w), [x, w])


def test_reshape_grad_round_trip():
    x = t64(rng(20).standard_normal((2, 6)))
    (g,) = tape_grads(lambda: T.rsum(T.reshape(x, (3, 4)) * T.reshape(x, (3, 4))), [x])
    assert g.shape == (2, 6)
    assert np.allclose(g, 2 * x.data)


def test_scale_grad():
    x = t64(rng(21).standard_normal((4,)))
    (g,) = tape_grads(lambda: T.rsum(T.scale(x, -2.5)), [x])
    assert np.allclose(g, -2.5 * np.ones(4))


def test_broadcast_add_grad_shapes():
    x = t64(rng(22).standard_normal((3, 4)))
    b = t64(rng(23).standard_normal((4,)))
    gx, gb = tape_grads(lambda: T.rsum((x + b) * (x + b)), [x, b])
    assert gx.shape == (3, 4) and gb.shape == (4,)
    check_scalar_fn(lambda: T.rsum((x + b) * (x + b)), [x, b])


def test_backward_seed_weights_components():
    x = t64(np.array([1.0, 2.0, 3.0]))
    with Tape() as tape:
        out = x * x
    tape.backward(seed=np.array([1.0, 0.0, 2.0]), leaves=[x])
    assert np.allclose(x.grad, [2.0, 0.0, 12.0])


# ---------------------------------------------------------------- errors


def test_shape_mismatch_raises():
    a = Tensor(np.zeros((2, 3)), dtype=np.float64)
    b = Tensor(np.zeros((2, 4)), dtype=np.float64)
    with pytest.raises(ShapeError):
        a + b
    with pytest.raises(ShapeError):
        a * Tensor(np.zeros((3, 3)), dtype=np.float64)


def test_matmul_inner_mismatch_raises():
    a = Tensor(np.zeros((2, 3)), dtype=np.float64)
    b = Tensor(np.zeros((4, 2)), dtype=np.float64)
    with pytest.raises(ShapeError):
        a @ b


def test_leading_broadcast_rejected():
    # only trailing-dimension broadcasting is defined
    a = Tensor(np.zeros((1, 3)), dtype=np.float64)
    b = Tensor(np.zeros((2, 3)), dtype=np.float64)
    assert (a + b).shape == (2, 3)
    c = Tensor(np.zeros((2,)), dtype=np.float64)
    d = Tensor(np.zeros((2, 3)), dtype=np.float64)
    with pytest.raises(ShapeError):
        c + d


def test_nested_tape_rejected():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_backward_seed_shape_mismatch():
    x = t64(np.ones(3))
    with Tape() as tape:
        out = x * x
    with pytest.raises(ShapeError):
        tape.backward(seed=np.ones((2,)))


def test_bad_reduction_axis():
    x = Tensor(np.zeros((2, 3)), dtype=np.float64)
    with pytest.raises(ShapeError):
        T.rsum(x, axis=5)


def test_split_indivisible_raises():
    x = Tensor(np.zeros((2, 7)), dtype=np.float64)
    with pytest.raises(ShapeError):
        T.split(x, 3, axis=-1)


# ---------------------------------------------------------------- properties


@given(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
               elements=st.floats(-10, 10)),
)
@settings(max_examples=50, deadline=None)
def test_add_matches_numpy(a):
    x = Tensor(a, dtype=np.float64)
    assert np.array_equal((x + x).data, a + a)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_forward_backward_deterministic(seed):
    r = np.random.default_rng(seed)
    xv = r.standard_normal((3, 4))
    wv = r.standard_normal((4, 2))

    def run():
        x, w = t64(xv.copy()), t64(wv.copy())
        with Tape() as tape:
            out = T.rsum(T.softmax(x @ w, axis=-1) * T.tanh(x @ w))
        tape.backward(leaves=[x, w])
        return out.item(), x.grad.copy(), w.grad.copy()

    v1, gx1, gw1 = run()
    v2, gx2, gw2 = run()
    assert v1 == v2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


@given(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
    st.integers(0, 2 ** 31 - 1),
)
@settings(max_examples=30, deadline=None)
def test_broadcast_grad_matches_full_materialization(n, m, k, seed):
    r = np.random.default_rng(seed)
    bv = r.standard_normal((k,))
    xv = r.standard_normal((n, m, k))
    b_small = t64(bv.copy())
    b_full = t64(np.broadcast_to(bv, (n, m, k)).copy())
    x1, x2 = t64(xv.copy()), t64(xv.copy())
    (g_small, _) = tape_grads(lambda: T.rsum(T.tanh(x1 * b_small)), [b_small, x1])
    (g_full, _) = tape_grads(lambda: T.rsum(T.tanh(x2 * b_full)), [b_full, x2])
    assert np.allclose(g_small, g_full.sum(axis=(0, 1)), atol=1e-10)
