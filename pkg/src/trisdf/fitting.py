"""Multi-view fitting of a triplane SDF model.

Objective per step: ``L = L_photo + lambda * L_s`` where ``L_photo`` is the
squared RGB error per pixel averaged over a random ray batch and ``L_s`` the
depth-consistency loss.  Schedule: for the first ``warmup_iters`` steps beta
is frozen at ``beta_init`` and ``lambda = 0``; afterwards beta is learned and
``lambda = lambda_final``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .encoding import PLANE_NAMES
from .field import ModelConfig, SdfModel
from .geometry import Camera, TriangleMesh, camera_rays, ray_box_bounds
from .renderer import SamplerConfig, render_image, render_rays, sdf_depth_loss

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("iter", "L_photo", "L_s", "beta", "lambda")


class FitError(RuntimeError):
    pass


@dataclass
class FitConfig:
    total_iters: int = 20000
    warmup_iters: int = 5000
    lambda_final: float = 0.1
    beta_init: float = 0.1
    rays_per_iter: int = 256
    lr_triplane: float = 1e-3
    lr_network: float = 1e-3
    lr_beta: float = 1e-3
    seed: int = 0
    log_every: int = 50
    detach_depth_in_Ls: bool = False
    ls_min_opacity: float = 0.99
    sampler: dict = field(default_factory=lambda: {"n_uniform": 16, "n_importance": 16, "jitter": True})
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.warmup_iters <= self.total_iters):
            raise ValueError("need 0 <= warmup_iters <= total_iters")
        if self.lambda_final < 0:
            raise ValueError("lambda_final must be >= 0")
        if self.beta_init <= 0:
            raise ValueError("beta_init must be positive")
        if not (0.0 <= self.ls_min_opacity < 1.0):
            raise ValueError("ls_min_opacity must lie in [0, 1)")
        if self.rays_per_iter < 1 or self.log_every < 1:
            raise ValueError("rays_per_iter and log_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"version"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{**self.model, "beta_init": self.beta_init,
                              "seed": self.model.get("seed", self.seed)})

    def sampler_config(self) -> SamplerConfig:
        # t_near/t_far are per ray; the config's bounds are only placeholders
        return SamplerConfig(t_near=0.0, t_far=1.0, **self.sampler)


def schedule(it: int, cfg: FitConfig) -> tuple[str, float]:
    """``("fixed", 0.0)`` during warm-up, ``("learnable", lambda_final)`` after."""
    if it < cfg.warmup_iters:
        return "fixed", 0.0
    return "learnable", cfg.lambda_final


@dataclass
class MultiViewDataset:
    images: list
    cameras: list
    gt_mesh: TriangleMesh | None = None

    def __post_init__(self):
        if not self.images or len(self.images) != len(self.cameras):
            raise ValueError("dataset needs matching non-empty images and cameras")
        shape = np.asarray(self.images[0]).shape
        for img, cam in zip(self.images, self.cameras):
            if np.asarray(img).shape != shape or shape != (cam.height, cam.width, 3):
                raise ValueError("images must share one (H, W, 3) shape matching the cameras")


@dataclass
class RayPool:
    """All dataset rays that cross the [-1, 1]^3 box, with their target colours."""

    origins: np.ndarray
    dirs: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_dataset(cls, ds: MultiViewDataset) -> "RayPool":
        parts = []
        for img, cam in zip(ds.images, ds.cameras):
            o, d = camera_rays(cam)
            t0, t1, hit = ray_box_bounds(o, d)
            rgb = np.asarray(img, dtype=np.float64).reshape(-1, 3)
            parts.append((o[hit], d[hit], t0[hit], t1[hit], rgb[hit]))
        return cls(*(np.concatenate(p) for p in zip(*parts)))

    def __len__(self):
        return len(self.origins)

    def batch(self, idx: np.ndarray):
        return self.origins[idx], self.dirs[idx], self.t_near[idx], self.t_far[idx], self.targets[idx]


class Adam:
    def __init__(self, lrs: dict, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lrs, self.b1, self.b2, self.eps = lrs, b1, b2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t: dict = {}

    def update(self, store: ad.ParamStore, names) -> None:
        for name in names:
            g = store.grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** t)
            vhat = v / (1 - self.b2 ** t)
            store.params[name] -= self.lrs[name] * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}


@dataclass
class FitState:
    model: SdfModel
    optimizer: Adam
    iteration: int = 0
    curves: list = field(default_factory=list)


def make_state(cfg: FitConfig, model: SdfModel | None = None) -> FitState:
    model = model or SdfModel(cfg.model_config())
    lrs = {}
    for name in model.store.names():
        if name in PLANE_NAMES:
            lrs[name] = cfg.lr_triplane
        elif name == "beta_raw":
            lrs[name] = cfg.lr_beta
        else:
            lrs[name] = cfg.lr_network
    return FitState(model, Adam(lrs))


@dataclass
class StepResult:
    loss: float
    l_photo: float
    l_s: float
    beta: float
    lam: float
    n_surface_rays: int


def surface_rays(out, t_near, t_far, min_opacity: float = 0.99) -> np.ndarray:
    """Indices of rays whose expected-depth point is a usable surface estimate."""
    dv = out.depth.value
    opacity = 1.0 - out.final_transmittance.value
    return np.flatnonzero((opacity >= min_opacity) & (dv >= t_near) & (dv <= t_far))


def loss_graph(model: SdfModel, tape: Tape, origins, dirs, t_near, t_far, targets,
               sampler: SamplerConfig, lam: float, rng=None, samples=None,
               detach_depth: bool = False, min_opacity: float = 0.99):
    """Build ``L_photo + lam * L_s`` on ``tape``.

    ``L_s`` is taken over the surface rays: accumulated opacity at least
    ``min_opacity`` and expected depth inside the ray's own [t_near, t_far].
    For a mostly transparent ray the expected depth is pulled toward the
    camera by the missing weight, so its "surface point" lies in empty space.
    Returns ``(loss, l_photo, l_s or None, render)``.
    """
    out = render_rays(model, tape, origins, dirs, t_near, t_far, sampler, rng, samples)
    # per-pixel error is the squared RGB distance, averaged over the batch
    l_photo = ad.mean(ad.square(out.color - targets).sum(axis=1))
    sel = surface_rays(out, t_near, t_far, min_opacity)
    l_s = None
    if sel.size:
        depth = ad.getitem(out.depth, sel)
        l_s = sdf_depth_loss(model, tape, origins[sel], dirs[sel], depth, detach_depth)
    loss = l_photo
    if lam > 0 and l_s is not None:
        loss = l_photo + lam * l_s
    return loss, l_photo, l_s, out


def step(state: FitState, batch, cfg: FitConfig, rng: np.random.Generator) -> StepResult:
    origins, dirs, t_near, t_far, targets = batch
    mode, lam = schedule(state.iteration, cfg)
    model = state.model
    model.beta_learnable = mode == "learnable"
    tape = Tape()
    loss, l_photo, l_s, out = loss_graph(model, tape, origins, dirs, t_near, t_far, targets,
                                         cfg.sampler_config(), lam, rng,
                                         detach_depth=cfg.detach_depth_in_Ls,
                                         min_opacity=cfg.ls_min_opacity)
    if not np.isfinite(loss.value):
        bad = ~(np.isfinite(out.color.value).all(axis=1) & np.isfinite(out.depth.value))
        k = int(np.flatnonzero(bad)[0]) if bad.any() else -1
        detail = ""
        if k >= 0:
            detail = (f"; first offending ray origin={origins[k].tolist()} dir={dirs[k].tolist()}"
                      f" t=[{t_near[k]}, {t_far[k]}]")
        raise FitError(f"non-finite loss at iteration {state.iteration}{detail}")
    store = model.store
    store.zero_grad()
    ad.backward(tape, loss, store)
    names = [n for n in store.names() if n != "beta_raw" or model.beta_learnable]
    state.optimizer.update(store, names)
    res = StepResult(float(loss.value), float(l_photo.value),
                     float(l_s.value) if l_s is not None else float("nan"),
                     model.current_beta() if model.beta_learnable else cfg.beta_init, lam,
                     len(surface_rays(out, t_near, t_far, cfg.ls_min_opacity)))
    state.iteration += 1
    return res


def fit_scene(dataset: MultiViewDataset, cfg: FitConfig, callback=None) -> FitState:
    """Run ``cfg.total_iters`` steps. Loss curves are kept on the returned state."""
    pool = RayPool.from_dataset(dataset)
    if len(pool) == 0:
        raise FitError("no dataset ray crosses the scene box")
    state = make_state(cfg)
    for it in range(cfg.total_iters):
        rng = np.random.default_rng([cfg.seed, it])
        idx = rng.integers(0, len(pool), cfg.rays_per_iter)
        res = step(state, pool.batch(idx), cfg, rng)
        if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
            row = {"iter": it, "L_photo": res.l_photo, "L_s": res.l_s,
                   "beta": res.beta, "lambda": res.lam}
            state.curves.append(row)
            log.info("iter %d  L_photo %.3e  L_s %.3e  beta %.4f  lambda %.2f",
                     it, res.l_photo, res.l_s, res.beta, res.lam)
            if callback is not None:
                callback(state, res)
    state.model.beta_learnable = cfg.total_iters > cfg.warmup_iters
    return state


def render_view(model: SdfModel, camera: Camera, sampler: SamplerConfig, seed: int = 0):
    """Colour, depth and opacity images of ``model`` seen from ``camera``."""
    return render_image(model, camera, sampler, seed)


def mean_sdf_loss(model: SdfModel, dataset: MultiViewDataset, sampler: SamplerConfig,
                  n_rays: int = 2048, seed: int = 0, min_opacity: float = 0.99) -> float:
    """L_s over a fixed random ray set, for comparing fitted models."""
    pool = RayPool.from_dataset(dataset)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), min(n_rays, len(pool)), replace=False)
    o, d, t0, t1, tgt = pool.batch(idx)
    tape = Tape(record=False)
    _, _, l_s, _ = loss_graph(model, tape, o, d, t0, t1, tgt, sampler, 0.0, rng,
                              min_opacity=min_opacity)
    return float("nan") if l_s is None else float(l_s.value)
