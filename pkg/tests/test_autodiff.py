import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisdf import autodiff as ad
from trisdf.autodiff import ParamStore, Tape, backward, grad_check, grad_of
from trisdf.field import sdf_to_density


def scalar_grad(fn, x0):
    tape = Tape()
    x = tape.leaf(np.asarray(x0, dtype=float))
    adj = backward(tape, fn(x))
    return grad_of(adj, x)


def test_identity_gradient():
    tape = Tape()
    x = tape.leaf(3.0)
    y = x * 1.0
    assert grad_of(backward(tape, y), x) == 1.0


def test_softplus_gradient_at_zero():
    assert scalar_grad(ad.softplus, 0.0) == 0.5


def test_softplus_stable_for_large_inputs():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    v = ad.softplus_value(x)
    assert np.all(np.isfinite(v))
    assert v[-1] == 800.0 and v[0] == 0.0
    np.testing.assert_allclose(v[2], np.log(2.0), rtol=1e-15)


def test_backward_rejects_non_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ValueError):
        backward(tape, x * 2.0)


def test_backward_requires_recorded_output():
    tape = Tape(record=False)
    x = tape.leaf(1.0)
    with pytest.raises(ValueError):
        backward(tape, x * 2.0)


def test_parents_precede_children():
    tape = Tape()
    x = tape.leaf(np.arange(4.0))
    y = ad.vsum(ad.exp(x) * ad.sin(x) + ad.square(x))
    backward(tape, y)
    for i, parents in enumerate(tape.parents):
        assert all(p < i for p in parents)


def test_unreachable_parameter_gets_zero():
    store = ParamStore({"a": np.ones(3), "b": np.ones(2)})
    tape = Tape()
    y = ad.vsum(tape.param(store, "a") * 2.0)
    tape.param(store, "b")
    backward(tape, y, store)
    np.testing.assert_array_equal(store.grads["a"], 2.0)
    np.testing.assert_array_equal(store.grads["b"], 0.0)


def test_linear_grad_check_is_exact():
    r = np.random.default_rng(0)
    store = ParamStore({"w": r.normal(size=(4, 3)), "b": r.normal(size=3)})
    x = r.normal(size=(5, 4))
    c = r.normal(size=(5, 3))

    def f(tape, s):
        return ad.vsum((x @ tape.param(s, "w") + tape.param(s, "b")) * c)

    # central differences are exact for linear f at any step; a wider step
    # only shrinks the cancellation error
    assert grad_check(f, store, eps=1e-3) < 1e-10


def test_grad_check_raises_on_non_finite():
    store = ParamStore({"w": np.array([-1.0])})
    with pytest.raises(ValueError), np.errstate(invalid="ignore"):
        grad_check(lambda t, s: ad.vsum(ad.log(t.param(s, "w"))), store)


def test_grad_check_catches_a_wrong_vjp():
    store = ParamStore({"w": np.array([0.7, -0.3])})

    def bad_square(a):
        return a.tape.push("bad", a.value ** 2, (a,), lambda g: (g * a.value,))

    assert grad_check(lambda t, s: ad.vsum(bad_square(t.param(s, "w"))), store) > 0.1


UNARY = [ad.exp, ad.sin, ad.cos, ad.softplus, ad.sigmoid, ad.square, ad.neg,
         lambda a: ad.log(ad.square(a) + 1.0), lambda a: ad.absolute(a)]


@pytest.mark.parametrize("op", UNARY)
def test_unary_primitives(op):
    r = np.random.default_rng(1)
    store = ParamStore({"x": r.uniform(0.1, 2.0, size=6) * r.choice([-1, 1], size=6)})
    c = r.normal(size=6)
    assert grad_check(lambda t, s: ad.vsum(op(t.param(s, "x")) * c), store) < 1e-6


def test_binary_and_broadcast_primitives():
    r = np.random.default_rng(2)
    store = ParamStore({"a": r.normal(size=(3, 4)), "b": r.uniform(0.5, 2, size=(4,)),
                        "m": r.normal(size=(4, 2))})

    def f(t, s):
        a, b, m = (t.param(s, k) for k in "abm")
        y = (a + b) * a / b - b
        y = ad.where(a.value > 0, y, a * 3.0)
        z = ad.matmul(y, m)
        return ad.mean(ad.square(z)) + ad.vsum(ad.cumsum(a, axis=1) * 0.1)

    assert grad_check(f, store) < 1e-6


def test_shape_primitives():
    r = np.random.default_rng(3)
    store = ParamStore({"a": r.normal(size=(3, 4)), "b": r.normal(size=(3, 2))})
    order = np.argsort(r.random((3, 6)), axis=1)
    w = r.normal(size=(3, 6))

    def f(t, s):
        a, b = t.param(s, "a"), t.param(s, "b")
        c = ad.concat([a, b], axis=1)
        g = ad.take_along_axis(c, order, axis=1)
        h = ad.reshape(g, (18,))
        k = ad.getitem(h, np.array([0, 3, 3, 17]))
        return ad.vsum(ad.reshape(g, (3, 6)) * w) + ad.vsum(k * k) + ad.vsum(a[:, 1:3])

    assert grad_check(f, store) < 1e-6


def test_density_transform_gradient_wrt_s_and_beta():
    r = np.random.default_rng(4)
    store = ParamStore({"s": r.uniform(-0.3, 0.3, size=20), "beta": np.array(0.1)})

    def f(t, s):
        return ad.vsum(sdf_to_density(t.param(s, "s"), t.param(s, "beta")) * 0.01)

    assert grad_check(f, store) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_linearity_of_gradients(alpha, gamma, seed):
    r = np.random.default_rng(seed)
    x0 = r.normal(size=5)

    def f(x):
        return ad.vsum(ad.sin(x) * x)

    def g(x):
        return ad.vsum(ad.softplus(x * 2.0))

    gf = scalar_grad(f, x0)
    gg = scalar_grad(g, x0)
    gc = scalar_grad(lambda x: f(x) * alpha + g(x) * gamma, x0)
    np.testing.assert_allclose(gc, alpha * gf + gamma * gg, atol=1e-12)


def test_gradient_accumulates_across_uses():
    tape = Tape()
    x = tape.leaf(np.array(2.0))
    y = x * x + x * 3.0
    assert grad_of(backward(tape, y), x) == pytest.approx(7.0)


def test_no_record_tape_skips_bookkeeping():
    tape = Tape(record=False)
    x = tape.leaf(np.ones(3))
    y = ad.exp(x)
    assert len(tape) == 0 and y.index == -1
