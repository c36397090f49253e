"""Volume rendering of SDF fields along rays.

Quadrature for ``M`` sorted samples ``t_1 < ... < t_M`` on ``[t_near, t_far]``::

    delta_i = t_{i+1} - t_i,  delta_M = t_far - t_M
    T_i     = exp(-sum_{j<i} sigma_j delta_j)
    w_i     = T_i (1 - exp(-sigma_i delta_i))
    color   = sum_i w_i c_i,   depth = sum_i w_i t_i

so that ``sum_i w_i + T_final = 1`` exactly.  The background is black.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .field import sdf_to_density
from .geometry import Ray, ray_box_bounds

IMPORTANCE_EPS = 1e-5


@dataclass
class SamplerConfig:
    n_uniform: int = 64
    n_importance: int = 64
    t_near: float = 0.0
    t_far: float = 1.0
    jitter: bool = True

    def __post_init__(self):
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")
        if self.n_uniform < 1 or self.n_importance < 0:
            raise ValueError("bad sample counts")
        if self.n_importance > 0 and self.n_uniform < 2:
            raise ValueError("importance sampling needs n_uniform >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: float
    weights: np.ndarray
    final_transmittance: float
    t_values: np.ndarray


def _as_bounds(n: int, t_near, t_far) -> tuple[np.ndarray, np.ndarray]:
    return (np.broadcast_to(np.asarray(t_near, dtype=np.float64), (n,)),
            np.broadcast_to(np.asarray(t_far, dtype=np.float64), (n,)))


def stratified_samples(t_near, t_far, n: int, rng: np.random.Generator | None,
                       jitter: bool = True, n_rays: int = 1) -> np.ndarray:
    """One sample per equal-width bin, shape (n_rays, n). Bin centres without jitter."""
    t_near, t_far = _as_bounds(n_rays, t_near, t_far)
    u = np.arange(n, dtype=np.float64)[None, :]
    if jitter:
        u = u + rng.random((n_rays, n))
    else:
        u = u + 0.5
    return t_near[:, None] + (t_far - t_near)[:, None] * (u / n)


def stratified_sample(ray: Ray, cfg: SamplerConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return stratified_samples(cfg.t_near, cfg.t_far, cfg.n_uniform, rng, cfg.jitter)[0]


def importance_samples(edges: np.ndarray, weights: np.ndarray, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF samples from piecewise-constant densities, batched.

    ``edges`` (B, K+1) sorted bin edges, ``weights`` (B, K) non-negative bin
    masses.  A small uniform floor keeps all-zero weights well defined.
    """
    edges = np.atleast_2d(np.asarray(edges, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    widths = np.diff(edges, axis=1)
    mass = weights + IMPORTANCE_EPS * widths / widths.sum(axis=1, keepdims=True)
    pdf = mass / mass.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((len(pdf), 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((len(pdf), n))
    # one searchsorted for the whole batch: offset each row by 2
    off = 2.0 * np.arange(len(pdf))[:, None]
    k = np.searchsorted((cdf + off).ravel(), (u + off).ravel(), side="right").reshape(u.shape)
    k = k - 1 - np.arange(len(pdf))[:, None] * cdf.shape[1]
    k = np.clip(k, 0, pdf.shape[1] - 1)
    c0 = np.take_along_axis(cdf, k, axis=1)
    p = np.take_along_axis(pdf, k, axis=1)
    e0 = np.take_along_axis(edges, k, axis=1)
    w = np.take_along_axis(widths, k, axis=1)
    frac = np.where(p > 0, (u - c0) / np.where(p > 0, p, 1.0), 0.5)
    return e0 + np.clip(frac, 0.0, 1.0) * w


def importance_sample(t_bins, weights, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return importance_samples(np.asarray(t_bins)[None], np.asarray(weights)[None], n, rng)[0]


def _deltas(t: np.ndarray, t_far: np.ndarray) -> np.ndarray:
    return np.concatenate([np.diff(t, axis=-1), t_far[..., None] - t[..., -1:]], axis=-1)


def composite_batch(sigmas, colors, t: np.ndarray, t_far):
    """Differentiable quadrature. ``sigmas`` (B, M), ``colors`` (B, M, 3).

    Returns ``(color (B,3), depth (B,), weights (B,M), T_final (B,))`` as tape
    variables when the inputs are variables.
    """
    t = np.asarray(t, dtype=np.float64)
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), t.shape[:-1])
    if np.any(np.diff(t, axis=-1) <= 0):
        raise ValueError("t values must be strictly increasing")
    delta = _deltas(t, t_far)
    if np.any(delta < 0):
        raise ValueError("samples beyond t_far")
    sv = sigmas.value if isinstance(sigmas, Var) else np.asarray(sigmas)
    if np.any(sv < 0):
        raise ValueError("negative density")
    if not isinstance(sigmas, Var):
        tape = colors.tape if isinstance(colors, Var) else Tape(record=False)
        sigmas = tape.const(sigmas)
    tape = sigmas.tape
    if not isinstance(colors, Var):
        colors = tape.const(colors)
    od = sigmas * delta
    acc = ad.cumsum(od, axis=-1)
    trans = ad.exp(-(acc - od))
    weights = trans * (1.0 - ad.exp(-od))
    color = ad.vsum(ad.reshape(weights, weights.shape + (1,)) * colors, axis=-2)
    depth = ad.vsum(weights * t, axis=-1)
    last = ad.getitem(acc, (Ellipsis, slice(-1, None)))
    t_final = ad.exp(-ad.reshape(last, last.shape[:-1]))
    return color, depth, weights, t_final


def composite(sigmas, colors, t_values, t_far: float | None = None) -> RenderOutput:
    """Composite a single ray. ``t_far`` defaults to the last sample (zero final interval)."""
    t = np.asarray(t_values, dtype=np.float64)
    sig = np.asarray(sigmas, dtype=np.float64)
    col = np.asarray(colors, dtype=np.float64).reshape(len(t), 3)
    if not (len(t) == len(sig) >= 1):
        raise ValueError("sigmas, colors and t_values need equal length >= 1")
    t_far = t[-1] if t_far is None else t_far
    color, depth, w, tf = composite_batch(sig[None], col[None], t[None], np.array([t_far]))
    return RenderOutput(color.value[0], float(depth.value[0]), w.value[0],
                        float(tf.value[0]), t.copy())


@dataclass
class RayBatchRender:
    color: Var
    depth: Var
    weights: Var
    final_transmittance: Var
    t_values: np.ndarray


def _eval_samples(field, tape: Tape, origins, dirs, t):
    b, m = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    s, c = field.query(tape, tape.const(pts.reshape(-1, 3)))
    sig = sdf_to_density(s, field.beta(tape))
    return ad.reshape(sig, (b, m)), ad.reshape(c, (b, m, 3))


def _strictly_increasing(t: np.ndarray, t_far: np.ndarray) -> np.ndarray:
    # coincident samples would give zero-width intervals
    ramp = 1e-12 * np.arange(t.shape[1])
    return np.minimum(t + ramp, t_far[:, None] - ramp[::-1] - 1e-12)


def render_rays(field, tape: Tape, origins, dirs, t_near, t_far, cfg: SamplerConfig,
                rng: np.random.Generator | None = None, samples: np.ndarray | None = None):
    """Two-pass render of a ray batch on ``tape``.

    The stratified pass is evaluated on the tape; its weights (as plain
    values) drive the importance pass; both sample sets are merged in sorted
    order and composited once.  Sample positions themselves carry no
    gradient.  Pass ``samples`` (B, M) to reuse fixed positions instead.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    t_near, t_far = _as_bounds(n, t_near, t_far)
    if samples is not None:
        sig, col = _eval_samples(field, tape, origins, dirs, samples)
        color, depth, w, tf = composite_batch(sig, col, samples, t_far)
        return RayBatchRender(color, depth, w, tf, samples)
    tc = stratified_samples(t_near, t_far, cfg.n_uniform, rng, cfg.jitter, n)
    sig_c, col_c = _eval_samples(field, tape, origins, dirs, tc)
    if cfg.n_importance == 0:
        color, depth, w, tf = composite_batch(sig_c, col_c, tc, t_far)
        return RayBatchRender(color, depth, w, tf, tc)
    w_c = composite_batch(sig_c.value, np.zeros(tc.shape + (3,)), tc, t_far)[2].value
    edges = np.concatenate([tc, t_far[:, None]], axis=1)
    tf_ = importance_samples(edges, w_c, cfg.n_importance, rng)
    sig_f, col_f = _eval_samples(field, tape, origins, dirs, tf_)
    t_all = np.concatenate([tc, tf_], axis=1)
    order = np.argsort(t_all, axis=1, kind="stable")
    t = _strictly_increasing(np.take_along_axis(t_all, order, axis=1), t_far)
    sig = ad.take_along_axis(ad.concat([sig_c, sig_f], axis=1), order, axis=1)
    col = ad.take_along_axis(ad.concat([col_c, col_f], axis=1), order[..., None], axis=1)
    color, depth, w, tfin = composite_batch(sig, col, t, t_far)
    return RayBatchRender(color, depth, w, tfin, t)


def plan_samples(field, origins, dirs, t_near, t_far, cfg: SamplerConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Sample positions the two-pass render would use, without gradients."""
    tape = Tape(record=False)
    return render_rays(field, tape, origins, dirs, t_near, t_far, cfg, rng).t_values


def check_segment(origin, direction, t_near: float, t_far: float, tol: float = 1e-9) -> None:
    o, d = np.asarray(origin), np.asarray(direction)
    for t in (t_near, t_far):
        p = o + t * d
        if np.any(np.abs(p) > 1.0 + tol):
            raise ValueError(f"ray segment leaves the [-1, 1]^3 extent at t={t}")


def render_ray(field, ray: Ray, cfg: SamplerConfig, seed: int) -> RenderOutput:
    check_segment(ray.origin, ray.direction, cfg.t_near, cfg.t_far)
    rng = np.random.default_rng(seed)
    tape = Tape(record=False)
    out = render_rays(field, tape, ray.origin[None], ray.direction[None],
                      cfg.t_near, cfg.t_far, cfg, rng)
    return RenderOutput(out.color.value[0].copy(), float(out.depth.value[0]),
                        out.weights.value[0].copy(), float(out.final_transmittance.value[0]),
                        out.t_values[0].copy())


def surface_point(ray: Ray, depth: float) -> np.ndarray:
    if depth < 0:
        raise ValueError("depth must be non-negative")
    return ray.origin + depth * ray.direction


def surface_points(origins, dirs, depth) -> Var | np.ndarray:
    """Batched ``o + d(r) * dir``; differentiable when ``depth`` is a variable."""
    if isinstance(depth, Var):
        return ad.reshape(depth, (depth.shape[0], 1)) * dirs + origins
    return origins + np.asarray(depth)[:, None] * dirs


def sdf_depth_loss(field, tape: Tape, origins, dirs, depth, detach_depth: bool = False) -> Var:
    """Mean absolute SDF at the expected-depth surface points of a ray set."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if len(origins) == 0:
        raise ValueError("empty ray set")
    if not isinstance(depth, Var):
        depth = tape.const(depth)
    if detach_depth:
        depth = tape.const(depth.value)
    pts = surface_points(origins, dirs, depth)
    if not isinstance(pts, Var):
        pts = tape.const(pts)
    s, _ = field.query(tape, pts)
    return ad.mean(ad.absolute(s))


def render_image(field, camera, cfg: SamplerConfig, seed: int, chunk: int = 2048):
    """Colour (H, W, 3), depth (H, W) and opacity (H, W) for a whole camera.

    Per-ray bounds come from the [-1, 1]^3 box; rays missing it stay black.
    """
    from .geometry import camera_rays

    o, d = camera_rays(camera)
    t0, t1, hit = ray_box_bounds(o, d)
    n = len(o)
    color = np.zeros((n, 3))
    depth = np.zeros(n)
    alpha = np.zeros(n)
    rng = np.random.default_rng(seed)
    idx = np.flatnonzero(hit)
    for i in range(0, len(idx), chunk):
        sel = idx[i:i + chunk]
        tape = Tape(record=False)
        out = render_rays(field, tape, o[sel], d[sel], t0[sel], t1[sel], cfg, rng)
        color[sel] = out.color.value
        depth[sel] = out.depth.value
        alpha[sel] = 1.0 - out.final_transmittance.value
    shape = (camera.height, camera.width)
    return color.reshape(shape + (3,)), depth.reshape(shape), alpha.reshape(shape)
