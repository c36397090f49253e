import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisdf import autodiff as ad
from trisdf.autodiff import ParamStore, Tape, grad_check
from trisdf.encoding import (PLANE_NAMES, PositionalEncoder, TriplaneGrid, augmented_features,
                             encode_points, positional_encode, triplane_sample)


def grid_with_planes(res=5, ch=3, seed=0, value=None):
    g = TriplaneGrid(res, ch)
    store = ParamStore()
    r = np.random.default_rng(seed)
    for name in PLANE_NAMES:
        store.add(name, np.full((res, res, ch), value) if value is not None
                  else r.normal(size=(res, res, ch)))
    return g, store


def test_pe_small_cases():
    np.testing.assert_array_equal(positional_encode(0.0, 2), [0, 0, 1, 0, 1])
    np.testing.assert_allclose(positional_encode(0.5, 1), [0.5, 1, 0], atol=1e-16)


def test_pe_matches_high_precision():
    mpmath.mp.dps = 40
    a = 0.3
    ref = [mpmath.mpf(a)]
    for k in range(4):
        ang = mpmath.mpf(2) ** k * mpmath.pi * mpmath.mpf(a)
        ref += [mpmath.sin(ang), mpmath.cos(ang)]
    np.testing.assert_allclose(positional_encode(a, 4), [float(x) for x in ref], atol=1e-14, rtol=0)


def test_pe_rejects_non_finite():
    with pytest.raises(ValueError):
        positional_encode(np.inf, 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 8))
def test_pe_shape_and_range(a, levels):
    v = positional_encode(a, levels)
    assert v.shape == (1 + 2 * levels,)
    assert np.all(np.abs(v[1:]) <= 1.0)


def test_batched_encoding_matches_scalar_version():
    enc = PositionalEncoder(3)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(7, 3))
    tape = Tape(record=False)
    out = encode_points(tape.const(pts), enc).value
    for i, p in enumerate(pts):
        ref = np.concatenate([positional_encode(c, 3) for c in p])
        np.testing.assert_allclose(out[i], ref, atol=1e-15)


def test_node_exactness():
    g, store = grid_with_planes(res=5)
    # node (i, j, k) sits at -1 + 2 * idx / (R - 1)
    i, j, k = 1, 3, 4
    p = -1 + 2 * np.array([i, j, k]) / 4
    f = triplane_sample(g, store, p)
    ref = np.concatenate([store["plane_xy"][i, j], store["plane_xz"][i, k], store["plane_yz"][j, k]])
    np.testing.assert_array_equal(f, ref)


def test_constant_planes_give_constant_features():
    g, store = grid_with_planes(value=0.7)
    for p in np.random.default_rng(1).uniform(-1, 1, size=(20, 3)):
        np.testing.assert_allclose(triplane_sample(g, store, p), 0.7, atol=1e-15)


def test_cell_centre_is_corner_average():
    g, store = grid_with_planes(res=5, seed=4)
    i, j, k = 0, 2, 1
    p = -1 + 2 * (np.array([i, j, k]) + 0.5) / 4
    f = triplane_sample(g, store, p)
    xy = store["plane_xy"][i:i + 2, j:j + 2].mean(axis=(0, 1))
    xz = store["plane_xz"][i:i + 2, k:k + 2].mean(axis=(0, 1))
    yz = store["plane_yz"][j:j + 2, k:k + 2].mean(axis=(0, 1))
    np.testing.assert_allclose(f, np.concatenate([xy, xz, yz]), atol=1e-12)


def test_continuity_across_cell_boundary():
    g, store = grid_with_planes(res=6, seed=2)
    edge = -1 + 2 * 2 / 5
    for eps in (1e-13, 0.0):
        a = triplane_sample(g, store, [edge - eps, 0.1, -0.3])
        b = triplane_sample(g, store, [edge + eps, 0.1, -0.3])
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_extent_is_a_contract():
    g, store = grid_with_planes()
    triplane_sample(g, store, [1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        triplane_sample(g, store, [1.01, 0, 0])


def test_augmented_layout_and_dimension():
    g, store = grid_with_planes(res=4, ch=2, value=0.0)
    enc = PositionalEncoder(1)
    p = np.array([[0.2, -0.4, 0.9]])
    tape = Tape(record=False)
    f = augmented_features(tape, g, store, enc, tape.const(p)).value[0]
    assert f.shape == (15,)
    np.testing.assert_array_equal(f[:6], 0.0)
    ref = np.concatenate([positional_encode(c, 1) for c in p[0]])
    np.testing.assert_allclose(f[6:], ref, atol=1e-15)


def test_gradients_wrt_points_and_planes():
    g, store = grid_with_planes(res=5, ch=2, seed=9)
    enc = PositionalEncoder(2)
    r = np.random.default_rng(3)
    # keep points away from cell boundaries (the gradient is piecewise smooth there)
    cell = r.integers(0, 4, size=(6, 3))
    pts = -1 + 2 * (cell + r.uniform(0.2, 0.8, size=(6, 3))) / 4
    store.add("pts", pts)
    w = r.normal(size=(6, 6 + 15))

    def f(tape, s):
        p = tape.param(s, "pts")
        return ad.vsum(augmented_features(tape, g, s, enc, p) * w)

    assert grad_check(f, store) < 1e-6


def test_point_gradient_is_piecewise_constant_per_cell():
    g, store = grid_with_planes(res=5, ch=1, seed=5)
    tape = Tape()
    pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.1, 0.1]])  # same cell in x
    p = tape.leaf(pts)
    feat = g.sample(tape, store, p)
    adj = ad.backward(tape, ad.vsum(ad.getitem(feat, (slice(None), 0))))
    gx = ad.grad_of(adj, p)[:, 0]
    assert gx[0] == pytest.approx(gx[1], abs=1e-12)
