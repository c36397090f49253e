from types import SimpleNamespace

import numpy as np
import pytest

from trisdf.autodiff import Tape, grad_check
from trisdf.field import AnalyticSdf, AnalyticField
from trisdf.fitting import (Adam, FitConfig, FitError, MultiViewDataset, RayPool, fit_scene,
                            loss_graph, make_state, schedule, step, surface_rays)
from trisdf.renderer import SamplerConfig, render_image, render_rays
from trisdf.scenes import OrbitSpec, orbit_cameras

TINY_MODEL = {"resolution": 8, "channels": 4, "levels": 2, "hidden": 16}


def toy_dataset(n_views=2, size=8):
    fld = AnalyticField(AnalyticSdf.sphere(0.5), beta=0.02)
    cams = orbit_cameras(OrbitSpec(count=n_views), size)
    cfg = SamplerConfig(32, 32, 0.0, 1.0, jitter=False)
    return MultiViewDataset([render_image(fld, c, cfg, seed=0)[0] for c in cams], cams)


def tiny_cfg(**kw):
    base = dict(total_iters=20, warmup_iters=10, rays_per_iter=32, log_every=1,
                sampler={"n_uniform": 8, "n_importance": 8, "jitter": True}, model=TINY_MODEL)
    return FitConfig(**{**base, **kw})


def test_schedule_steps_exactly_at_warmup():
    cfg = FitConfig(total_iters=100, warmup_iters=25)
    assert [schedule(i, cfg) for i in (0, 24)] == [("fixed", 0.0)] * 2
    assert schedule(25, cfg) == ("learnable", 0.1)
    assert schedule(99, cfg) == ("learnable", 0.1)


def test_config_validation_and_round_trip():
    cfg = tiny_cfg(seed=4)
    assert FitConfig.from_dict({"version": 1, **cfg.to_dict()}) == cfg
    for bad in ({"warmup_iters": 30}, {"lambda_final": -1}, {"beta_init": 0},
                {"ls_min_opacity": 1.0}, {"rays_per_iter": 0}):
        with pytest.raises(ValueError):
            tiny_cfg(**bad)
    with pytest.raises(ValueError):
        FitConfig.from_dict({"bogus": 1})


def test_warmup_beta_frozen_with_zero_gradient_then_learned():
    ds = toy_dataset()
    pool = RayPool.from_dataset(ds)
    cfg = tiny_cfg()
    st = make_state(cfg)
    raw0 = st.model.store["beta_raw"].copy()
    lams = []
    for it in range(cfg.total_iters):
        rng = np.random.default_rng([0, it])
        res = step(st, pool.batch(rng.integers(0, len(pool), 32)), cfg, rng)
        lams.append(res.lam)
        if it < cfg.warmup_iters:
            assert res.beta == 0.1
            assert np.all(st.model.store.grads["beta_raw"] == 0)
            assert np.array_equal(st.model.store["beta_raw"], raw0)
    assert lams == [0.0] * 10 + [0.1] * 10
    assert not np.array_equal(st.model.store["beta_raw"], raw0)


def test_adam_zero_gradient_is_a_no_op():
    from trisdf.autodiff import ParamStore

    store = ParamStore({"w": np.arange(5.0)})
    opt = Adam({"w": 0.1})
    for _ in range(3):
        opt.update(store, ["w"])
    np.testing.assert_array_equal(store["w"], np.arange(5.0))


def test_adam_first_step_moves_by_lr():
    from trisdf.autodiff import ParamStore

    store = ParamStore({"w": np.zeros(3)})
    store.grads["w"][:] = [2.0, -0.5, 1e3]
    Adam({"w": 0.01}).update(store, ["w"])
    np.testing.assert_allclose(store["w"], [-0.01, 0.01, -0.01], rtol=1e-6)


def test_full_loss_gradient_with_fixed_samples():
    ds = toy_dataset()
    pool = RayPool.from_dataset(ds)
    cfg = tiny_cfg(model={**TINY_MODEL, "resolution": 5, "channels": 2, "hidden": 6})
    st = make_state(cfg)
    model = st.model
    model.beta_learnable = True
    rng = np.random.default_rng(2)
    o, d, t0, t1, tgt = pool.batch(rng.integers(0, len(pool), 6))
    sampler = cfg.sampler_config()
    plan = render_rays(model, Tape(record=False), o, d, t0, t1, sampler, rng).t_values

    def f(tape, store):
        old = model.store
        model.store = store
        try:
            loss, _, _, _ = loss_graph(model, tape, o, d, t0, t1, tgt, sampler, 0.1,
                                       samples=plan, min_opacity=0.0)
        finally:
            model.store = old
        return loss

    assert grad_check(f, model.store, max_entries=30) < 1e-4


def test_surface_rays_gate():
    out = SimpleNamespace(depth=SimpleNamespace(value=np.array([2.5, 2.5, 5.0, 2.5])),
                          final_transmittance=SimpleNamespace(value=np.array([0.0, 0.9, 0.0, 0.5])))
    idx = surface_rays(out, np.full(4, 2.0), np.full(4, 4.0), 0.5)
    assert idx.tolist() == [0, 3]


def test_toy_fit_reduces_photo_loss_tenfold():
    ds = toy_dataset()
    cfg = tiny_cfg(total_iters=500, warmup_iters=500, rays_per_iter=64, log_every=50,
                   lr_triplane=1e-2, lr_network=1e-2)
    st = fit_scene(ds, cfg)
    first, last = st.curves[0]["L_photo"], np.mean([r["L_photo"] for r in st.curves[-2:]])
    assert last * 10 <= first


def test_fit_is_deterministic():
    ds = toy_dataset()
    cfg = tiny_cfg()
    a, b = fit_scene(ds, cfg), fit_scene(ds, cfg)
    for k in a.model.store.names():
        assert np.array_equal(a.model.store[k], b.model.store[k])
    np.testing.assert_equal(a.curves, b.curves)


def test_nonfinite_loss_raises_fit_error():
    ds = toy_dataset()
    pool = RayPool.from_dataset(ds)
    cfg = tiny_cfg()
    st = make_state(cfg)
    st.model.store.params["sdf_w2"][:] = np.nan
    rng = np.random.default_rng(0)
    with pytest.raises(FitError, match="iteration 0"):
        step(st, pool.batch(np.arange(8)), cfg, rng)


def test_dataset_validation():
    cams = orbit_cameras(OrbitSpec(count=2), 8)
    with pytest.raises(ValueError):
        MultiViewDataset([np.zeros((8, 8, 3))], cams)
    with pytest.raises(ValueError):
        MultiViewDataset([np.zeros((8, 8, 3)), np.zeros((4, 4, 3))], cams)
