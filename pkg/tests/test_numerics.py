import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pantyping import numerics
from pantyping.numerics import Graph, GraphError, ShapeError, check_gradients, relative_error


def test_add_elementwise():
    g = Graph()
    out = g.add(g.const([1.0, 2.0]), g.const([3.0, 4.0]))
    np.testing.assert_array_equal(out.value, [4.0, 6.0])


def test_sigmoid_at_zero():
    g = Graph()
    assert g.sigmoid(g.const([0.0])).value[0] == 0.5


def test_softmax_equal_scores_is_uniform():
    g = Graph()
    np.testing.assert_allclose(g.softmax(g.const([7.0, 7.0, 7.0])).value, [1 / 3] * 3, atol=1e-15)


def test_shape_mismatch_names_op_and_shapes():
    g = Graph()
    with pytest.raises(ShapeError, match=r"matvec.*\(2, 3\).*\(2,\)"):
        g.matvec(g.const(np.ones((2, 3))), g.const(np.ones(2)))
    with pytest.raises(ShapeError, match="add"):
        g.add(g.const(np.ones(3)), g.const(np.ones(2)))


def test_dot_gradient_is_other_operand():
    g = Graph()
    w = g.param(np.array([0.3, -1.2, 2.0]), "w")
    x = g.const([1.5, 0.5, -2.0])
    g.backward(g.dot(w, x))
    np.testing.assert_array_equal(w.grad, [1.5, 0.5, -2.0])


def test_sum_sigmoid_gradient_quarter():
    g = Graph()
    z = g.param(np.zeros(5), "z")
    g.backward(g.sum(g.sigmoid(z)))
    np.testing.assert_array_equal(z.grad, np.full(5, 0.25))


def test_backward_errors():
    with pytest.raises(GraphError, match="before any forward"):
        g = Graph()
        g.backward(numerics.Node(g, 0))
    g = Graph()
    v = g.param(np.ones(3), "v")
    with pytest.raises(GraphError, match="scalar"):
        g.backward(g.tanh(v))
    loss = g.sum(v)
    g.backward(loss)
    with pytest.raises(GraphError, match="already"):
        g.backward(loss)


def test_reachable_nodes_get_gradients_of_matching_shape():
    g = Graph()
    a = g.param(np.ones((2, 3)), "a")
    b = g.param(np.ones(3), "b")
    unused = g.param(np.ones(4), "unused")
    loss = g.sum(g.tanh(g.matvec(a, b)))
    g.backward(loss)
    for node in (a, b):
        assert node.grad.shape == node.value.shape
    assert unused.grad is None
    assert g.param_grads()["unused"].shape == (4,)


def _finite_difference(f, x, eps=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def test_three_layer_graph_matches_finite_differences(rng):
    d = 4
    W1, W2, w3 = rng.normal(size=(d, d)), rng.normal(size=(d, d)), rng.normal(size=d)
    x = rng.normal(size=d)

    def build():
        g = Graph()
        p1, p2, p3 = g.param(W1, "W1"), g.param(W2, "W2"), g.param(w3, "w3")
        h1 = g.tanh(g.matvec(p1, g.const(x)))
        h2 = g.softmax(g.sigmoid(g.matvec(p2, h1)))
        loss = g.add(g.dot(p3, h2), g.sum(g.log_clamped(h2)))
        return g, loss

    g, loss = build()
    g.backward(loss)
    analytic = g.param_grads()
    for name, arr in (("W1", W1), ("W2", W2), ("w3", w3)):
        numeric = _finite_difference(lambda: float(build()[1].value), arr)
        err = np.abs(analytic[name] - numeric) / np.maximum(1.0, np.abs(analytic[name]) + np.abs(numeric))
        assert err.max() < 1e-6, name


@pytest.mark.parametrize("op", ["exp", "tanh", "sigmoid"])
def test_unary_gradients(op, rng):
    x = rng.normal(size=(3, 2))

    def build():
        g = Graph()
        p = g.param(x, "x")
        return g, g.sum(getattr(g, op)(p))

    g, loss = build()
    g.backward(loss)
    numeric = _finite_difference(lambda: float(build()[1].value), x)
    np.testing.assert_allclose(g.param_grads()["x"], numeric, atol=1e-8)


def test_structural_ops_gradients(rng):
    A = rng.normal(size=(3, 4))
    B = rng.normal(size=(4, 2))
    v = rng.normal(size=4)
    E = rng.normal(size=(5, 4))
    ids = [0, 3, 3, 1]

    def build():
        g = Graph()
        a, b, vv, e = g.param(A, "A"), g.param(B, "B"), g.param(v, "v"), g.param(E, "E")
        m = g.matmul(a, b)                             # 3x2
        t = g.transpose(g.mul(a, vv))                  # broadcast 3x4 * 4 -> 4x3
        rows = g.embed(e, ids)                         # 4x4
        pooled = g.mean(rows, axis=0)                  # 4
        st_ = g.stack([pooled, vv])                    # 2x4
        cat = g.concat([g.sum(m, axis=1), g.sum(t, axis=0), g.sum(st_, axis=0)])
        sm = g.softmax(g.matmul(st_, g.transpose(a)), axis=0)
        return g, g.add(g.sum(g.tanh(cat)), g.sum(g.mul(sm, g.const(np.arange(6.0).reshape(2, 3)))))

    g, loss = build()
    g.backward(loss)
    grads = g.param_grads()
    for name, arr in (("A", A), ("B", B), ("v", v), ("E", E)):
        numeric = _finite_difference(lambda: float(build()[1].value), arr)
        np.testing.assert_allclose(grads[name], numeric, atol=1e-8, err_msg=name)


def test_lstm_and_path_product_gradients(rng):
    X = rng.normal(size=(5, 3))
    W = rng.normal(scale=0.5, size=(8, 5))
    b = rng.normal(size=8)
    T = rng.normal(size=(4, 3))
    idx = np.array([[0, 0], [0, 1], [0, 1], [2, 3]])
    idx[2, 1] = 2
    lengths = np.array([1, 2, 2, 2])

    def build():
        g = Graph()
        x, w, bb, t = g.param(X, "X"), g.param(W, "W"), g.param(b, "b"), g.param(T, "T")
        h = g.lstm(x, w, bb)
        p = g.path_product(t, idx, lengths)
        return g, g.add(g.sum(g.mul(h, g.const([1.0, -2.0]))), g.sum(g.tanh(p)))

    g, loss = build()
    g.backward(loss)
    grads = g.param_grads()
    for name, arr in (("X", X), ("W", W), ("b", b), ("T", T)):
        numeric = _finite_difference(lambda: float(build()[1].value), arr)
        np.testing.assert_allclose(grads[name], numeric, atol=1e-8, err_msg=name)


def test_log_clamped_floor_keeps_backward_finite():
    g = Graph()
    x = g.param(np.array([0.0, -3.0, 1e-15, 0.5]), "x")
    out = g.log_clamped(x)
    assert np.all(out.value >= np.log(numerics.LOG_FLOOR))
    g.backward(g.sum(out))
    assert np.all(np.isfinite(x.grad))
    np.testing.assert_array_equal(x.grad[:3], 0.0)
    assert x.grad[3] == 2.0


def test_bce_logits_gradient_closed_form(rng):
    z = rng.normal(scale=3.0, size=9)
    y = (rng.random(9) < 0.5).astype(float)
    g = Graph()
    zn = g.param(z, "z")
    loss = g.bce_logits(zn, y)
    g.backward(loss)
    p = 1.0 / (1.0 + np.exp(-z))
    np.testing.assert_allclose(zn.grad, p - y, atol=1e-10)
    expected = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum()
    assert abs(float(loss.value) - expected) < 1e-10


def test_bce_logits_extreme_logits_stay_finite():
    g = Graph()
    z = g.param(np.array([-800.0, 800.0, -50.0]), "z")
    loss = g.bce_logits(z, [1.0, 0.0, 0.0])
    g.backward(loss)
    assert np.isfinite(loss.value)
    assert float(loss.value) == pytest.approx(2 * -np.log(1e-12), rel=1e-9)
    assert np.all(np.isfinite(z.grad))


@settings(max_examples=1000, deadline=None)
@given(arrays(np.float64, st.integers(1, 32), elements=st.floats(-50, 50)))
def test_softmax_is_probability_vector(z):
    p = numerics.softmax(z)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert abs(p.sum() - 1.0) < 1e-9


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 32), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    np.testing.assert_allclose(numerics.softmax(z), numerics.softmax(z + c), atol=1e-9)


def test_check_gradients_reports_worst_coordinate():
    x = np.array([1.0, 2.0, 3.0])
    report = check_gradients(lambda: float((x ** 2).sum()), {"x": x}, {"x": 2 * x})
    assert report.passed
    bad = check_gradients(lambda: float((x ** 2).sum()), {"x": x}, {"x": np.array([2.0, 4.0, 7.0])})
    assert not bad.passed
    assert bad.groups[0].worst_index == (2,)
    assert "FAIL" in str(bad)


def test_check_gradients_flags_non_finite_probe():
    x = np.array([0.0])
    report = check_gradients(lambda: float(np.log(x[0]) if x[0] > 0 else np.nan), {"x": x},
                             {"x": np.zeros(1)})
    assert not report.passed
    assert report.groups[0].worst_index == (0,)


def test_relative_error_uses_unit_floor():
    assert relative_error(1e-7, 0.0) == 1e-7
    assert relative_error(100.0, 99.0) == pytest.approx(1 / 199)
