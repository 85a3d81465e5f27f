import numpy as np
import pytest

from flowtune import autograd as ag
from flowtune.autograd import ShapeError, Tape, TapeMismatchError, jacobian

from oracles import fd_gradient, fd_jacobian, grad_close


def test_mul_square_gradient():
    tape = Tape()
    x = tape.input(3.0)
    y = x * x
    tape.backward(y)
    assert float(tape.grad(x)) == pytest.approx(6.0)


def test_softplus_at_zero():
    tape = Tape()
    x = tape.input(0.0)
    y = ag.softplus(x)
    assert float(y.value) == pytest.approx(np.log(2.0), abs=1e-12)
    tape.backward(y)
    assert float(tape.grad(x)) == pytest.approx(0.5, abs=1e-12)


def test_concat_routes_gradients():
    tape = Tape()
    a = tape.input([1.0, 2.0])
    b = tape.input([3.0])
    c = ag.concat([a, b])
    np.testing.assert_allclose(c.value, [1.0, 2.0, 3.0])
    total = ag.scale(ag.mean(c), 3.0)  # equals the plain sum
    tape.backward(total)
    np.testing.assert_allclose(tape.grad(a), [1.0, 1.0])
    np.testing.assert_allclose(tape.grad(b), [1.0])


def test_unrolled_linear_map_gradient():
    # x_{k+1} = a * x_k for 3 iterations: dy/da = 3 a^2 x0
    tape = Tape()
    a = tape.input(0.5)
    x = tape.constant(1.0)
    for _ in range(3):
        x = a * x
    tape.backward(x)
    assert float(tape.grad(a)) == pytest.approx(3 * 0.25 * 1.0, abs=1e-14)


def test_gradient_zero_at_quadratic_minimum():
    tape = Tape()
    t = tape.constant([1.0, -2.0, 0.5])
    p = tape.input([1.0, -2.0, 0.5])
    loss = ag.mean(ag.square(p - t))
    tape.backward(loss)
    np.testing.assert_array_equal(tape.grad(p), np.zeros(3))


def test_backward_requires_scalar():
    tape = Tape()
    v = tape.input([1.0, 2.0])
    with pytest.raises(ShapeError):
        tape.backward(v)


def test_cross_tape_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.input(1.0)
    b = t2.input(2.0)
    with pytest.raises(TapeMismatchError):
        ag.add(a, b)


def test_shape_mismatch_message_names_shapes():
    tape = Tape()
    a = tape.input(np.ones((2, 3)))
    b = tape.input(np.ones((4, 2)))
    with pytest.raises(ShapeError) as err:
        ag.matmul(a, b)
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_affine_batch_bias_gradient():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    tape = Tape()
    xv, wv, bv = tape.constant(x), tape.input(w), tape.input(b)
    y = ag.mean(ag.square(ag.affine(xv, wv, bv)))
    tape.backward(y)

    def f_w(wflat):
        return float(((x @ wflat.reshape(3, 2) + b) ** 2).mean())

    def f_b(bb):
        return float(((x @ w + bb) ** 2).mean())

    assert grad_close(tape.grad(wv).ravel(), fd_gradient(f_w, w.ravel()))
    assert grad_close(tape.grad(bv), fd_gradient(f_b, b))


@pytest.mark.parametrize("seed", range(12))
def test_primitive_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=6)
    y = rng.normal(size=6)

    cases = {
        "add": lambda t, a, b: ag.mean(ag.square(a + b)),
        "sub": lambda t, a, b: ag.mean(ag.square(a - b)),
        "mul": lambda t, a, b: ag.mean(ag.square(a * b)),
        "softplus": lambda t, a, b: ag.mean(ag.softplus(a)),
        "slice": lambda t, a, b: ag.mean(ag.square(ag.vslice(a, 1, 4))),
        "scale": lambda t, a, b: ag.mean(ag.scale(ag.square(a), 2.5)),
        "concat": lambda t, a, b: ag.mean(ag.square(ag.concat([a, b]))),
        "matmul": lambda t, a, b: ag.mean(ag.square(ag.matmul(a, b))),
    }
    for name, build in cases.items():
        tape = Tape()
        av, bv = tape.input(x), tape.input(y)
        out = build(tape, av, bv)
        tape.backward(out)

        def scalar_of(xx, name=name):
            t2 = Tape()
            a2, b2 = t2.input(xx), t2.constant(y)
            return float(cases[name](t2, a2, b2).value)

        assert grad_close(tape.grad(av), fd_gradient(scalar_of, x)), name


def test_linearity_of_backward():
    rng = np.random.default_rng(3)
    x = rng.normal(size=4)
    alpha, beta = 0.7, -1.3

    def grads(factor_pair):
        a, b = factor_pair
        tape = Tape()
        v = tape.input(x)
        y1 = ag.mean(ag.square(v))
        y2 = ag.mean(ag.softplus(v))
        y = ag.scale(y1, a) + ag.scale(y2, b)
        tape.backward(y)
        return tape.grad(v)

    g_combo = grads((alpha, beta))
    g1 = grads((1.0, 0.0))
    g2 = grads((0.0, 1.0))
    np.testing.assert_allclose(g_combo, alpha * g1 + beta * g2, rtol=0, atol=1e-15)


def test_backward_is_repeatable_and_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=5)

    def run():
        tape = Tape()
        v = tape.input(x)
        y = ag.mean(ag.square(ag.softplus(v * v)))
        g1 = None
        tape.backward(y)
        g1 = tape.grad(v).copy()
        tape.backward(y)
        return g1, tape.grad(v)

    ga1, ga2 = run()
    gb1, _ = run()
    assert np.array_equal(ga1, ga2)
    assert np.array_equal(ga1, gb1)


def test_jacobian_of_linear_map_is_matrix():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])

    def f(v):
        return ag.matmul(v.tape.constant(a), v)

    np.testing.assert_allclose(jacobian(f, np.array([0.3, -0.7])), a, atol=1e-12)


def test_jacobian_of_identity():
    np.testing.assert_allclose(jacobian(lambda v: v, np.ones(4)), np.eye(4),
                               atol=1e-15)


def test_jacobian_matches_finite_differences_on_random_mlp():
    from flowtune.nn import MlpSurrogate, NormStats

    model = MlpSurrogate.initialize(4, 3, NormStats.identity(4),
                                    NormStats.identity(3), seed=5)
    x = np.random.default_rng(5).normal(size=4)

    def f(v):
        return model.record(v.tape, v)

    j_auto = jacobian(f, x)
    j_fd = fd_jacobian(model.predict, x)
    assert np.all(np.abs(j_auto - j_fd)
                  <= np.maximum(1e-4 * np.abs(j_auto), 1e-6))
