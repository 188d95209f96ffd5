"""Gradient correctness: every op family checked against central differences."""

import numpy as np
import pytest

from triarm import nets
from triarm.tensor import Graph

EPS = 1e-5


def _numeric_grad(f, x, eps=EPS):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        hi = f(x)
        x[idx] = orig - eps
        lo = f(x)
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return g


def _check(build, x0, atol=5e-7):
    """build(g, x_node) -> scalar loss node; compares d loss / d x."""
    g = Graph()
    xp = g.param(x0)
    loss = build(g, xp)
    analytic = g.backward(loss)[xp]

    def f(x):
        g2 = Graph()
        return float(g2.value(build(g2, g2.param(x))))

    numeric = _numeric_grad(f, x0.copy())
    np.testing.assert_allclose(analytic, numeric, atol=atol)


def test_add_mul_broadcast_grad():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)

    def build(g, xp):
        return g.sum(g.mul(g.add(xp, g.constant(b)), xp))

    _check(build, x0)
    # gradient w.r.t. the broadcast side
    x = rng.standard_normal((3, 4))
    b0 = rng.standard_normal(4)

    def build_b(g, bp):
        return g.sum(g.square(g.add(g.constant(x), bp)))

    _check(build_b, b0)


def test_matmul_grad_both_sides():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((4, 2))
    x0 = rng.standard_normal((3, 4))

    def build_x(g, xp):
        return g.sum(g.square(g.matmul(xp, g.constant(w))))

    _check(build_x, x0)
    x = rng.standard_normal((3, 4))
    w0 = rng.standard_normal((4, 2))

    def build_w(g, wp):
        return g.sum(g.square(g.matmul(g.constant(x), wp)))

    _check(build_w, w0)


@pytest.mark.parametrize("opname", ["tanh", "relu", "exp", "square",
                                    "softplus", "neg"])
def test_unary_grads(opname):
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((2, 5)) + 0.3  # avoid relu kink at 0

    def build(g, xp):
        return g.sum(g.square(getattr(g, opname)(xp)))

    _check(build, x0)


def test_log_grad():
    x0 = np.array([[0.5, 1.5, 2.5]])

    def build(g, xp):
        return g.sum(g.log(xp))

    _check(build, x0)


def test_clamp_grad_zero_outside_pass_inside():
    x0 = np.array([-9.0, -1.0, 0.5, 4.0])

    def build(g, xp):
        return g.sum(g.square(g.clamp(xp, -2.0, 1.0)))

    g = Graph()
    xp = g.param(x0)
    grad = g.backward(build(g, xp))[xp]
    assert grad[0] == 0.0 and grad[3] == 0.0
    np.testing.assert_allclose(grad[1], 2 * -1.0)
    np.testing.assert_allclose(grad[2], 2 * 0.5)


def test_minimum_grad_routes_to_smaller():
    a0 = np.array([1.0, 5.0])
    b = np.array([3.0, 2.0])

    def build(g, ap):
        return g.sum(g.minimum(ap, g.constant(b)))

    g = Graph()
    ap = g.param(a0)
    grad = g.backward(build(g, ap))[ap]
    np.testing.assert_allclose(grad, [1.0, 0.0])


def test_concat_reshape_take_rows_grads():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((3, 4))
    y = rng.standard_normal((3, 2))
    idx = np.array([0, 2, 2, 1])

    def build(g, xp):
        c = g.concat(xp, g.constant(y), axis=1)
        r = g.reshape(c, (2, 9))
        back = g.reshape(r, (3, 6))
        t = g.take_rows(back, idx)
        return g.sum(g.square(t))

    _check(build, x0)


def test_conv1d_grads():
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((2, 2, 10))
    k = rng.standard_normal((3, 2, 4))

    def build_x(g, xp):
        return g.sum(g.square(g.conv1d(xp, g.constant(k), stride=2)))

    _check(build_x, x0)
    x = rng.standard_normal((2, 2, 10))
    k0 = rng.standard_normal((3, 2, 4))

    def build_k(g, kp):
        return g.sum(g.square(g.conv1d(g.constant(x), kp, stride=2)))

    _check(build_k, k0)


def test_conv2d_grads():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((1, 2, 7, 7))
    k = rng.standard_normal((2, 2, 3, 3))

    def build_x(g, xp):
        return g.sum(g.square(g.conv2d(xp, g.constant(k), stride=2)))

    _check(build_x, x0)
    x = rng.standard_normal((1, 2, 7, 7))
    k0 = rng.standard_normal((2, 2, 3, 3))

    def build_k(g, kp):
        return g.sum(g.square(g.conv2d(g.constant(x), kp, stride=2)))

    _check(build_k, k0)


def test_cross_entropy_grad():
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((4, 6))
    labels = np.array([0, 5, 2, 2])

    def build(g, xp):
        return g.cross_entropy(xp, labels)

    _check(build, x0)


def test_normalize_rows_grad():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((3, 5)) + 0.1
    w = rng.standard_normal((3, 5))

    def build(g, xp):
        return g.sum(g.mul(g.normalize_rows(xp), g.constant(w)))

    _check(build, x0)


def test_mean_axis_grad():
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((3, 4))

    def build(g, xp):
        return g.sum(g.square(g.mean_axis(xp, axis=0)))

    _check(build, x0)


def test_backward_requires_scalar():
    g = Graph()
    x = g.param(np.ones((2, 2)))
    y = g.square(x)
    with pytest.raises(ValueError):
        g.backward(y)


def test_backward_frees_intermediate_buffers():
    g = Graph()
    x = g.param(np.ones((4, 4)))
    h = g.tanh(x)
    loss = g.sum(g.square(h))
    g.backward(loss)
    # param values survive; intermediate values are dropped
    assert g.value(x) is not None
    assert g.nodes[h].value is None


def test_grad_accumulates_across_reuse():
    # x used twice: d/dx (x*x + 3x) = 2x + 3
    g = Graph()
    x = g.param(np.array([2.0]))
    loss = g.sum(g.add(g.mul(x, x), g.scale(x, 3.0)))
    np.testing.assert_allclose(g.backward(loss)[x], [7.0])


def test_network_grad_check_end_to_end():
    assert nets.grad_check(seed=0) < 1e-4
