from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from misprompt import tensor as T
from misprompt.errors import DimensionError, NumericError
from misprompt.tensor import Tensor, grad_check


def _param(rng, r, c, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=(r, c)), requires_grad=True)


def _probe(out: Tensor, rng) -> Tensor:
    # contract with fixed random weights so every output entry gets a distinct cotangent
    w = Tensor(rng.normal(size=out.shape))
    return T.sum_all(T.mul(out, w))


# ops under test: (name, builder(rng, r, c) -> (params, fn))
def _unary(op):
    def build(rng, r, c):
        a = _param(rng, r, c)
        return [a], lambda: op(a)
    return build


def _binary(op):
    def build(rng, r, c):
        a, b = _param(rng, r, c), _param(rng, r, c)
        return [a, b], lambda: op(a, b)
    return build


def _broadcast_add(rng, r, c):
    a, b = _param(rng, r, c), _param(rng, 1, c)
    return [a, b], lambda: T.add(a, b)


def _matmul(rng, r, c):
    a, b = _param(rng, r, c), _param(rng, c, r + 1)
    return [a, b], lambda: T.matmul(a, b)


def _layer_norm(rng, r, c):
    # width 2 is degenerate: each normalised row is +-1 and the input gradient vanishes
    c = max(c, 3)
    a = _param(rng, r, c)
    g, b = _param(rng, 1, c), _param(rng, 1, c)
    return [a, g, b], lambda: T.layer_norm(a, g, b)


def _concat(rng, r, c):
    a, b = _param(rng, r, c), _param(rng, r + 1, c)
    return [a, b], lambda: T.concat_rows([a, b, a])


def _slice(rng, r, c):
    a = _param(rng, r + 2, c)
    return [a], lambda: T.slice_rows(a, 1, r + 1)


def _gather(rng, r, c):
    a = _param(rng, r + 2, c)
    ids = list(rng.integers(0, r + 2, size=r + 3))
    return [a], lambda: T.gather_rows(a, ids)


# layer norm is curved enough that h=1e-3 truncation exceeds 1e-4 on small
# gradient entries (seed 0 gives 2.4e-4); see test_layer_norm_fd_error_is_truncation
STEP = {"layer_norm": 1e-4}

OPS = {
    "add": _binary(T.add),
    "add_broadcast": _broadcast_add,
    "sub": _binary(lambda a, b: a - b),
    "neg": _unary(T.neg),
    "scale": _unary(lambda a: T.scale(a, -1.7)),
    "mul": _binary(T.mul),
    "div": _unary(lambda a: (a + 1.0) / 2.5),
    "tanh": _unary(T.tanh),
    "gelu": _unary(T.gelu),
    "softplus": _unary(T.softplus),
    "matmul": _matmul,
    "transpose": _unary(T.transpose),
    "sum_all": _unary(T.sum_all),
    "mean_all": _unary(T.mean_all),
    "softmax_rows": _unary(T.softmax_rows),
    "log_softmax_rows": _unary(T.log_softmax_rows),
    "layer_norm": _layer_norm,
    "concat_rows": _concat,
    "slice_rows": _slice,
    "gather_rows": _gather,
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(10))
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    r, c = int(rng.integers(1, 5)), int(rng.integers(1, 17))
    params, fn = OPS[name](rng, r, c)
    probe_rng = np.random.default_rng(seed + 100)
    weights = Tensor(probe_rng.normal(size=fn().shape))
    err = grad_check(lambda: T.sum_all(T.mul(fn(), weights)), params, h=STEP.get(name, 1e-3))
    assert err < 1e-4, f"{name}: {err}"


def test_layer_norm_fd_error_is_truncation():
    # the finite-difference gap shrinks as h^2, so the analytic gradient is the limit
    rng = np.random.default_rng(0)
    r, c = int(rng.integers(1, 5)), int(rng.integers(1, 17))
    params, fn = _layer_norm(rng, r, c)
    weights = Tensor(np.random.default_rng(100).normal(size=fn().shape))
    f = lambda: T.sum_all(T.mul(fn(), weights))
    coarse, fine = grad_check(f, params, h=1e-3), grad_check(f, params, h=1e-4)
    assert coarse > 1e-4
    assert 50 < coarse / fine < 200


def test_grad_check_sum_is_exact():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    assert grad_check(lambda: T.sum_all(x), [x]) < 1e-9


def test_grad_check_square_against_analytic():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    f = lambda: T.sum_all(T.mul(x, x))
    f().backward()
    np.testing.assert_array_equal(x.grad, [[2.0, 4.0]])
    assert grad_check(f, [x], h=1e-4) < 1e-6


def test_grad_check_rejects_non_finite():
    x = Tensor([[1.0]], requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(lambda: T.scale(T.sum_all(x), float("inf")), [x])


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), a).data, a.data)
    np.testing.assert_array_equal(T.matmul(a, Tensor(np.zeros((2, 2)))).data, np.zeros((2, 2)))
    b = [[5.0, 6.0], [7.0, 8.0]]
    oracle = [[sum(a.data[i, k] * b[k][j] for k in range(2)) for j in range(2)] for i in range(2)]
    assert oracle == [[19.0, 22.0], [43.0, 50.0]]
    np.testing.assert_array_equal(T.matmul(a, Tensor(b)).data, oracle)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_backward_formula(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    g = rng.normal(size=(3, 2))
    T.matmul(a, b).backward(g)
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    big = T.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.isfinite(big).all() and big[0, 0] == 1.0 and big[0, 1] < 1e-300
    z = sum(math.exp(v) for v in (1, 2, 3))
    oracle = [math.exp(v) / z for v in (1, 2, 3)]
    np.testing.assert_allclose(T.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0], oracle, atol=1e-12)
    np.testing.assert_allclose(oracle, [0.09003, 0.24473, 0.66524], atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
              elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, shift):
    p = T.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    q = T.softmax_rows(Tensor(x + shift)).data
    np.testing.assert_allclose(p, q, atol=1e-12)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4)))
    np.testing.assert_allclose(T.layer_norm(Tensor([[5.0, 5, 5, 5]]), one, zero).data, 0.0, atol=1e-12)
    out = T.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2)))).data
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-6)
    row = [1.0, 2.0, 3.0]
    mu = sum(row) / 3
    var = sum((v - mu) ** 2 for v in row) / 3
    oracle = [2.0 * (v - mu) / math.sqrt(var) + 1.0 for v in row]
    got = T.layer_norm(Tensor([row]), Tensor(np.full((1, 3), 2.0)), Tensor(np.ones((1, 3)))).data[0]
    np.testing.assert_allclose(got, oracle, atol=1e-6)


def test_layer_norm_moments_and_shape_error(rng):
    x = Tensor(rng.normal(3.0, 5.0, size=(6, 10)))
    y = T.layer_norm(x, Tensor(np.ones((1, 10))), Tensor(np.zeros((1, 10)))).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-6)
    with pytest.raises(DimensionError):
        T.layer_norm(x, Tensor(np.ones((1, 9))), Tensor(np.zeros((1, 10))))


def test_gradients_accumulate_across_uses_and_reset():
    x = Tensor([[1.0, -2.0]], requires_grad=True)
    T.sum_all(T.add(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0]])
    T.sum_all(x).backward()
    np.testing.assert_array_equal(x.grad, [[3.0, 3.0]])
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, [[0.0, 0.0]])


def test_frozen_tensor_never_gets_gradient():
    w = Tensor([[2.0]])
    x = Tensor([[3.0]], requires_grad=True)
    T.sum_all(T.mul(w, x)).backward()
    assert w.grad is None
    assert x.grad.shape == x.shape


def test_shared_subexpression_gradient_not_aliased():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    y = T.tanh(x)
    T.sum_all(T.add(y, T.mul(y, y))).backward()
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (1 + 2 * t) * (1 - t * t))


def test_shape_invariants():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert (t.rows, t.cols) == (2, 3) and t.data.size == 6
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2, 2)))
