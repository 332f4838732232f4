import math

import numpy as np
import pytest

from odeblocks.autodiff import (
    NonFiniteError,
    OP_KINDS,
    ShapeError,
    Tape,
    Var,
    backward,
    cross_entropy,
    finite_diff_check,
    mse,
    select,
    tanh,
    vsum,
)
from odeblocks.integrators import tableau, step


def test_tanh_of_zero_is_zero():
    t = Tape()
    out = t.apply("tanh", t.leaf([0.0]))
    assert t.value(out) == np.array([0.0])


def test_matmul_hand_value():
    t = Tape()
    out = t.apply("matmul", t.leaf([[1.0, 2.0]]), t.leaf([[3.0], [4.0]]))
    assert t.value(out).shape == (1, 1)
    assert t.value(out)[0, 0] == 11.0


def test_mse_of_identical_arguments_is_zero():
    t = Tape()
    x = t.leaf([[1.0, -2.0], [0.5, 3.0]])
    assert float(t.value(t.apply("mse", x, x))) == 0.0


def test_backward_linear_map_gives_constant_gradient():
    t = Tape()
    x = t.var([1.0, -2.0, 3.0])
    out = vsum(x * 3.0)
    grads = backward(t, out.nid)
    np.testing.assert_array_equal(grads[x.nid], np.full(3, 3.0))


def test_backward_rejects_non_scalar_output():
    t = Tape()
    x = t.leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        backward(t, x)


def test_zero_seed_gives_zero_gradients():
    t = Tape()
    x = t.var([1.0, 2.0])
    out = vsum(tanh(x))
    grads = backward(t, out.nid, seed=0.0)
    np.testing.assert_array_equal(grads[x.nid], np.zeros(2))


def test_unreachable_leaf_gets_zero_gradient():
    t = Tape()
    x = t.var([1.0, 2.0])
    unused = t.var([[5.0]])
    out = vsum(x)
    grads = backward(t, out.nid)
    np.testing.assert_array_equal(grads[unused.nid], np.zeros((1, 1)))


def test_shape_errors_name_operation_and_shapes():
    t = Tape()
    a = t.leaf(np.ones((2, 3)))
    b = t.leaf(np.ones((2, 3)))
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        t.apply("matmul", a, b)
    with pytest.raises(ShapeError, match="add"):
        t.apply("add", a, t.leaf(np.ones((3, 2))))


def test_non_finite_results_are_rejected():
    t = Tape()
    big = t.leaf(np.full((1, 1), 1e308))
    with pytest.raises(NonFiniteError):
        t.apply("matmul", big, big)


def test_determinism_bit_identical():
    def build():
        t = Tape()
        rng = np.random.default_rng(7)
        x = t.var(rng.normal(size=(4, 3)))
        w = t.var(rng.normal(size=(5, 3)))
        out = mse(tanh(x @ w.T), np.zeros((4, 5)))
        return t.value(out.nid).copy(), backward(t, out.nid)[x.nid].copy()

    v1, g1 = build()
    v2, g2 = build()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


# --- chain-rule correctness: every registered op kind against central FD ----

def _random_point(rng, shape):
    return rng.normal(size=shape)


def _builder_for(kind, rng):
    """A scalar function exercising ``kind``, plus the point to probe."""
    if kind == "matmul":
        w = rng.normal(size=(3, 2))
        return lambda t, x: vsum(tanh(x @ t.var(w))), _random_point(rng, (4, 3))
    if kind == "add":
        b = rng.normal(size=3)
        return lambda t, x: vsum(tanh(x + t.var(b))), _random_point(rng, (2, 3))
    if kind == "scale":
        return lambda t, x: vsum(x * -1.7), _random_point(rng, (3, 2))
    if kind == "mul":
        other = rng.normal(size=(3, 2))
        return lambda t, x: vsum(x * t.var(other)), _random_point(rng, (3, 2))
    if kind == "transpose":
        w = rng.normal(size=(2, 4))
        return lambda t, x: vsum(tanh(x.T @ t.var(w))), _random_point(rng, (3, 2))
    if kind == "tanh":
        return lambda t, x: vsum(tanh(x)), _random_point(rng, (5,))
    if kind == "sum":
        return lambda t, x: vsum(tanh(x)) * 2.0, _random_point(rng, (4,))
    if kind == "mse":
        target = rng.normal(size=(3, 2))
        return lambda t, x: mse(tanh(x), target), _random_point(rng, (3, 2))
    if kind == "select":
        return lambda t, x: vsum(tanh(select(x, 1))), _random_point(rng, (3, 4))
    if kind == "cross_entropy":
        labels = rng.integers(0, 3, size=4)
        return lambda t, x: cross_entropy(x, labels), _random_point(rng, (4, 3))
    raise AssertionError(f"no FD builder for kind {kind}")


@pytest.mark.parametrize("kind", [k for k in OP_KINDS])
def test_backward_matches_finite_differences(kind):
    rng = np.random.default_rng(42)
    for _ in range(10):
        f, point = _builder_for(kind, rng)
        report = finite_diff_check(f, point)
        assert report.max_rel_error <= 1e-5, f"{kind}: rel error {report.max_rel_error}"


def test_two_layer_net_weight_gradient_matches_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 2))
    a = rng.normal(size=(2, 4))
    b = rng.normal(size=4)
    y = rng.normal(size=(5, 2))

    def f(t, w):
        h = tanh((t.var(x) @ w.T) + t.var(b))
        return mse(h @ t.var(a.T).T, y)

    report = finite_diff_check(f, rng.normal(size=(4, 2)))
    assert report.max_rel_error <= 1e-5


def test_gradient_through_unrolled_rk4_step():
    # d/dtheta of one RK4 step of xdot = theta * x
    tab = tableau("rk4")
    x0 = np.array([[1.3]])

    def f(t, theta):
        x = t.var(x0)
        out = step(tab, lambda s, _t: s * theta, x, 0.0, 0.37)
        return vsum(out)

    report = finite_diff_check(f, np.array([[0.8]]))
    assert report.max_rel_error <= 1e-5


# --- finite_diff_check's own contract ---------------------------------------

def test_fd_check_polynomial():
    report = finite_diff_check(lambda t, x: vsum(x * x), np.array([1.0, 2.0]))
    np.testing.assert_allclose(report.analytic, [2.0, 4.0], rtol=1e-12)
    assert report.max_rel_error < 1e-8


def test_fd_check_tanh_closed_form():
    report = finite_diff_check(lambda t, x: vsum(tanh(x)), np.array([0.5]))
    expected = 1.0 - math.tanh(0.5) ** 2
    np.testing.assert_allclose(report.analytic, [expected], rtol=1e-12)
    assert report.max_rel_error < 1e-6


def test_fd_check_constant_function_zero_gradient():
    report = finite_diff_check(lambda t, x: vsum(x * 0.0), np.array([0.3, -0.7]))
    np.testing.assert_array_equal(report.analytic, np.zeros(2))
    assert report.max_rel_error == 0.0


def test_fd_check_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t, x: vsum(x), np.array([1.0]), step=0.0)


def test_select_gradient_routes_to_one_slice():
    t = Tape()
    x = t.var(np.arange(12.0).reshape(3, 4))
    out = vsum(select(x, 2) * 2.0)
    g = backward(t, out.nid)[x.nid]
    np.testing.assert_array_equal(g[2], np.full(4, 2.0))
    np.testing.assert_array_equal(g[:2], np.zeros((2, 4)))


def test_cross_entropy_label_validation():
    t = Tape()
    logits = t.leaf(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        t.apply("cross_entropy", logits, labels=[0, 3])
