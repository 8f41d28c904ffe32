import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mhcl import ndcore as nd
from mhcl.errors import ContractError, DomainError, ShapeError
from mhcl.gradcheck import check_gradients, numeric_grad, relative_error


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = nd.Tensor([[1, 2], [3, 4]])
        np.testing.assert_array_equal(nd.matmul(a, np.eye(2)).data, [[1, 2], [3, 4]])
        np.testing.assert_array_equal(nd.matmul(np.eye(2), nd.Tensor([[5], [7]])).data, [[5], [7]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(nd.matmul(a, b).data, triple_loop_matmul(a, b), atol=1e-12, rtol=0)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            nd.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_symmetric_rows(self):
        np.testing.assert_allclose(nd.rowwise_softmax([[0.0, 0.0]], 1.0).data, [[0.5, 0.5]])
        for tau in (0.1, 1.0, 7.0):
            np.testing.assert_allclose(nd.rowwise_softmax([[2.5, 2.5, 2.5]], tau).data, [[1 / 3] * 3], atol=1e-15)

    def test_direct_formula(self):
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(nd.rowwise_softmax([[1.0, 2.0, 3.0]], 1.0).data, [e / e.sum()], atol=1e-12, rtol=0)

    def test_large_logits_are_stable(self):
        out = nd.rowwise_softmax([[1000.0, 1001.0]], 1.0).data
        assert np.all(np.isfinite(out))

    def test_temperature_must_be_positive(self):
        with pytest.raises(ContractError):
            nd.rowwise_softmax([[1.0]], 0.0)

    @settings(max_examples=50, deadline=None)
    # logit gaps over tau stay below ~36 so the largest entry is representably < 1
    @given(arrays(np.float64, (4, 5), elements=st.floats(-4, 4)), st.floats(0.25, 5.0))
    def test_rows_sum_to_one(self, x, tau):
        out = nd.rowwise_softmax(x, tau).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out > 0) and np.all(out < 1)


class TestElementwise:
    def test_leaky_relu(self):
        assert nd.leaky_relu([[5.0]], 0.2).item() == 5.0
        assert nd.leaky_relu([[-10.0]], 0.2).item() == pytest.approx(-2.0, abs=1e-15)
        assert nd.leaky_relu([[0.0]], 0.2).item() == 0.0

    def test_concat_cols_shape(self):
        assert nd.concat_cols([np.ones((3, 4)), np.zeros((3, 4))]).shape == (3, 8)

    def test_frobenius(self):
        assert nd.frobenius_sq(np.zeros((3, 2))).item() == 0.0
        assert nd.frobenius_sq([[1, 2], [3, 4]]).item() == 30.0

    def test_log_domain(self):
        with pytest.raises(DomainError):
            nd.log_op([[1.0, 0.0]])
        assert nd.safe_log([[0.0]]).item() == pytest.approx(math.log(1e-12))

    def test_add_shape_error(self):
        with pytest.raises(ShapeError):
            nd.add(np.ones((2, 3)), np.ones((3, 2)))

    def test_finite_outputs(self):
        x = np.array([[-800.0, 0.0, 800.0]])
        for op in (nd.tanh_op, nd.sigmoid, nd.log_sigmoid, nd.l2_normalize_rows, nd.log_softmax_rows):
            assert np.all(np.isfinite(op(x).data))


# gradient oracle -------------------------------------------------------------

RNG = np.random.default_rng(11)


def _p(shape, name, positive=False):
    data = RNG.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    return nd.parameter(data, name=name)


def _weights(shape):
    return np.random.default_rng(sum(shape)).normal(size=shape)


UNARY_OPS = {
    "tanh": nd.tanh_op,
    "exp": nd.exp_op,
    "sigmoid": nd.sigmoid,
    "log_sigmoid": nd.log_sigmoid,
    "leaky_relu": lambda x: nd.leaky_relu(x, 0.2),
    "softmax_tau1": lambda x: nd.rowwise_softmax(x, 1.0),
    "softmax_tau03": lambda x: nd.rowwise_softmax(x, 0.3),
    "log_softmax": nd.log_softmax_rows,
    "logsumexp": lambda x: nd.logsumexp_rows(x),
    "logsumexp_masked": lambda x: nd.logsumexp_rows(x, np.arange(12).reshape(3, 4) % 3 != 0),
    "l2_normalize": nd.l2_normalize_rows,
    "transpose": nd.transpose,
    "scalar_mul": lambda x: nd.scalar_mul(x, -2.5),
    "reduce_sum_rows": lambda x: nd.reduce_sum(x, axis=1),
    "reduce_sum_cols": lambda x: nd.reduce_sum(x, axis=0),
    "mean": nd.mean,
    "frobenius_sq": nd.frobenius_sq,
    "slice_rows": lambda x: nd.slice_rows(x, 1, 3),
    "slice_cols": lambda x: nd.slice_cols(x, 1, 3),
    "index_rows": lambda x: nd.index_rows(x, [2, 0, 2, 1]),
    "spmm": lambda x: nd.spmm(np.array([[0, 1.5, 0], [0.3, 0, 0], [0, 2.0, -1.0]]), x),
    "clamp_min": lambda x: nd.clamp_min(x, -10.0),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_gradients(name):
    x = _p((3, 4), "x")
    op = UNARY_OPS[name]

    def loss():
        out = op(x)
        return nd.reduce_sum(nd.mul(out, _weights(out.shape)))

    assert check_gradients(loss, [x])["x"] <= 1e-4


def test_log_gradient():
    x = _p((3, 4), "x", positive=True)
    assert check_gradients(lambda: nd.reduce_sum(nd.mul(nd.log_op(x), _weights((3, 4)))), [x])["x"] <= 1e-4


BINARY_OPS = {
    "add": (nd.add, (3, 4), (3, 4)),
    "add_row_broadcast": (nd.add, (3, 4), (1, 4)),
    "add_col_broadcast": (nd.add, (3, 4), (3, 1)),
    "sub": (nd.sub, (3, 4), (3, 4)),
    "mul": (nd.mul, (3, 4), (3, 4)),
    "mul_col_broadcast": (nd.mul, (3, 1), (3, 4)),
    "div": (nd.div, (3, 4), (1, 4)),
    "matmul": (nd.matmul, (3, 4), (4, 2)),
    "concat_cols": (lambda a, b: nd.concat_cols([a, b]), (3, 4), (3, 2)),
    "concat_rows": (lambda a, b: nd.concat_rows([a, b]), (3, 4), (2, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
def test_binary_gradients(name):
    op, sa, sb = BINARY_OPS[name]
    a = _p(sa, "a")
    b = _p(sb, "b", positive=(name == "div"))

    def loss():
        out = op(a, b)
        return nd.reduce_sum(nd.mul(out, _weights(out.shape)))

    errs = check_gradients(loss, [a, b])
    assert max(errs.values()) <= 1e-4, errs


class TestBackward:
    def test_square(self):
        w = nd.parameter([[3.0]], name="w")
        np.testing.assert_allclose(nd.backward(nd.frobenius_sq(w))[w], [[6.0]])

    def test_sum_matmul_vs_finite_differences(self):
        a, b = _p((3, 4), "a"), _p((4, 2), "b")
        errs = check_gradients(lambda: nd.reduce_sum(nd.matmul(a, b)), [a, b])
        assert max(errs.values()) <= 1e-4

    def test_constant_has_zero_gradient(self):
        w = nd.parameter([[1.0, 2.0]], name="w")
        c = nd.Tensor([[5.0, 5.0]])
        grads = nd.backward(nd.reduce_sum(nd.mul(w, c)))
        np.testing.assert_array_equal(grads[c], 0.0)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            nd.backward(nd.parameter(np.ones((2, 2)), name="w"))

    def test_shared_subexpression_accumulates(self):
        x = nd.parameter([[2.0]], name="x")
        y = nd.mul(x, x)
        loss = nd.add(y, y)  # 2x^2 -> 4x
        assert nd.backward(loss)[x][0, 0] == pytest.approx(8.0)

    def test_backward_is_pure(self):
        a, b = _p((3, 4), "a"), _p((4, 2), "b")
        loss = nd.mean(nd.tanh_op(nd.matmul(a, b)))
        tape = nd.build_tape(loss)
        g1, g2 = nd.backward(loss, tape), nd.backward(loss, tape)
        for p in (a, b):
            np.testing.assert_array_equal(g1[p], g2[p])

    def test_tape_is_topological_and_unique(self):
        a = _p((2, 2), "a")
        h = nd.tanh_op(a)
        loss = nd.reduce_sum(nd.add(nd.mul(h, h), h))
        tape = nd.build_tape(loss)
        position = {id(n): i for i, n in enumerate(tape.nodes)}
        assert len(position) == len(tape.nodes)
        for node in tape.nodes:
            for p in node.parents:
                assert position[id(p)] < position[id(node)]

    def test_numeric_grad_restores_parameter(self):
        w = _p((2, 3), "w")
        before = w.data.copy()
        numeric_grad(lambda: nd.frobenius_sq(w), w)
        np.testing.assert_array_equal(w.data, before)

    def test_relative_error_zero_case(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def scalar_adam(theta, grads, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = nd.parameter([[1.0, -2.0]], name="p")
        nd.adam_step([p], {p: np.zeros((1, 2))}, nd.AdamState(lr=0.1))
        np.testing.assert_array_equal(p.data, [[1.0, -2.0]])

    def test_first_step_is_unit_direction(self):
        p = nd.parameter([[0.0]], name="p")
        nd.adam_step([p], {p: np.ones((1, 1))}, nd.AdamState(lr=0.1))
        # bias-corrected first step: m_hat = 1, v_hat = 1 -> 0.1 / (1 + 1e-8)
        assert p.item() == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)

    def test_two_steps_match_scalar_reference(self):
        p = nd.parameter([[0.7]], name="p")
        state = nd.AdamState(lr=0.1)
        for _ in range(2):
            nd.adam_step([p], {p: np.full((1, 1), 0.3)}, state)
        assert state.step == 2
        assert p.item() == pytest.approx(scalar_adam(0.7, [0.3, 0.3]), abs=1e-10)

    def test_moment_shapes(self):
        p = nd.parameter(np.ones((3, 2)), name="p")
        state = nd.AdamState()
        nd.adam_step([p], {p: np.ones((3, 2))}, state)
        assert state.m["p"].shape == state.v["p"].shape == (3, 2)


class TestXavier:
    def test_deterministic(self):
        np.testing.assert_array_equal(nd.xavier_init(5, 7, seed=4), nd.xavier_init(5, 7, seed=4))

    def test_bound(self):
        w = nd.xavier_init(30, 20, seed=1)
        assert np.all(np.abs(w) <= math.sqrt(6 / 50))

    def test_mean_near_zero(self):
        assert abs(nd.xavier_init(100, 100, seed=2).mean()) <= 0.01

    def test_rejects_empty(self):
        with pytest.raises(ContractError):
            nd.xavier_init(0, 3)


def test_no_grad_records_nothing():
    x = nd.parameter(np.ones((2, 2)), name="x")
    with nd.no_grad():
        y = nd.tanh_op(nd.matmul(x, x))
    assert not y.requires_grad and y.parents == ()
    assert nd.tanh_op(x).requires_grad
