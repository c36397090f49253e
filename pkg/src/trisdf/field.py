"""SDF/colour network, Laplace density and analytic SDF oracles.

Sign convention: ``s > 0`` inside the object.  With that convention the
density transform below gives ``sigma -> 1/beta`` deep inside and
``sigma -> 0`` far outside.  ``negate_sdf`` flips a network that was trained
or loaded with the opposite (outside-positive) convention.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .encoding import PositionalEncoder, TriplaneGrid, augmented_features


def laplace_density(s, beta):
    """Numpy version of :func:`sdf_to_density` for arrays."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(np.asarray(beta) <= 0):
        raise ValueError("beta must be positive")
    e = np.exp(-np.abs(s) / beta)
    return np.where(s <= 0, 0.5 * e / beta, (1.0 - 0.5 * e) / beta)


def sdf_to_density(s, beta):
    """Laplace SDF-to-density transform.

    ``sigma = exp(s/beta) / (2 beta)`` for ``s <= 0`` and
    ``sigma = (1 - exp(-s/beta) / 2) / beta`` for ``s > 0``.
    Accepts floats/arrays or tape variables for either argument.
    """
    if not isinstance(s, Var) and not isinstance(beta, Var):
        return laplace_density(s, beta)
    bval = beta.value if isinstance(beta, Var) else np.asarray(beta)
    if np.any(bval <= 0):
        raise ValueError("beta must be positive")
    tape = s.tape if isinstance(s, Var) else beta.tape
    if not isinstance(s, Var):
        s = tape.const(s)
    e = ad.exp(-(ad.absolute(s) / beta))
    sval = s.value
    inside = (1.0 - 0.5 * e) / beta
    outside = (0.5 * e) / beta
    return ad.where(sval <= 0, outside, inside)


def softplus_inverse(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


@dataclass
class LaplaceDensity:
    beta_init: float = 0.1
    beta_min: float = 1e-4

    def __post_init__(self):
        if not (self.beta_init > 0 and self.beta_min > 0):
            raise ValueError("beta_init and beta_min must be positive")
        if self.beta_init <= self.beta_min:
            raise ValueError("beta_init must exceed beta_min")

    def init_params(self, store: ParamStore) -> None:
        store.add("beta_raw", np.array(softplus_inverse(self.beta_init - self.beta_min)))

    def learned_beta(self, store: ParamStore) -> float:
        return float(self.beta_min + ad.softplus_value(store["beta_raw"]))

    def beta(self, tape: Tape, store: ParamStore, learnable: bool):
        """Fixed mode returns exactly ``beta_init`` (no graph connection)."""
        if not learnable:
            return self.beta_init
        return self.beta_min + ad.softplus(tape.param(store, "beta_raw"))


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5 ** 0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


class SdfColorNetwork:
    """Two single-hidden-layer softplus heads sharing the augmented input.

    The SDF head outputs a scalar, the colour head three channels squashed to
    [0, 1] with a sigmoid.  Both first layers are evaluated with one matmul.
    """

    def __init__(self, in_dim: int, hidden: int = 64):
        self.in_dim = int(in_dim)
        self.hidden = int(hidden)

    def init_params(self, store: ParamStore, rng: np.random.Generator, raw_cols=(),
                    init_radius: float = 0.3, sharpness: float = 10.0,
                    feature_cols=()) -> None:
        """Initialise so that ``s(p) ~ init_radius - |p|`` (a centred sphere).

        ``raw_cols`` are the input columns holding x, y, z.  Hidden units of the
        SDF head get Fibonacci-sphere directions on those columns; the output
        layer averages the resulting ramps into a cone ``|p|``.
        """
        d, h = self.in_dim, self.hidden
        w1 = np.zeros((d, h))
        feature_cols = list(feature_cols)
        if feature_cols:
            w1[feature_cols] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(len(feature_cols), h))
        raw_cols = list(raw_cols)
        if raw_cols:
            w1[raw_cols] = sharpness * fibonacci_directions(h).T
        store.add("sdf_w1", w1)
        store.add("sdf_b1", np.zeros(h))
        store.add("sdf_w2", np.full((h, 1), -4.0 / (h * sharpness)))
        store.add("sdf_b2", np.zeros(1))
        if raw_cols:
            probe = init_radius * fibonacci_directions(256)
            x = np.zeros((len(probe), d))
            x[:, raw_cols] = probe
            s0 = ad.softplus_value(x @ w1) @ store["sdf_w2"]
            store.params["sdf_b2"][:] = -s0.mean()
        store.add("rgb_w1", rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, h)))
        store.add("rgb_b1", np.zeros(h))
        store.add("rgb_w2", rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, 3)))
        store.add("rgb_b2", np.zeros(3))

    def forward(self, tape: Tape, store: ParamStore, feats: Var) -> tuple[Var, Var]:
        if feats.shape[-1] != self.in_dim:
            raise ValueError(f"feature length {feats.shape[-1]} != network input {self.in_dim}")
        h = self.hidden
        w1 = ad.concat([tape.param(store, "sdf_w1"), tape.param(store, "rgb_w1")], axis=1)
        b1 = ad.concat([tape.param(store, "sdf_b1"), tape.param(store, "rgb_b1")], axis=0)
        act = ad.softplus(feats @ w1 + b1)
        hs = ad.getitem(act, (slice(None), slice(0, h)))
        hc = ad.getitem(act, (slice(None), slice(h, 2 * h)))
        s = hs @ tape.param(store, "sdf_w2") + tape.param(store, "sdf_b2")
        c = ad.sigmoid(hc @ tape.param(store, "rgb_w2") + tape.param(store, "rgb_b2"))
        return ad.reshape(s, (feats.shape[0],)), c


def eval_field(net: SdfColorNetwork, store: ParamStore, features) -> tuple[float, np.ndarray]:
    """Single-point forward pass: ``(s, rgb)``."""
    tape = Tape(record=False)
    f = np.asarray(features, dtype=np.float64).reshape(1, -1)
    s, c = net.forward(tape, store, tape.const(f))
    return float(s.value[0]), c.value[0].copy()


@dataclass
class ModelConfig:
    resolution: int = 64
    channels: int = 16
    levels: int = 4
    hidden: int = 64
    beta_init: float = 0.1
    beta_min: float = 1e-4
    negate_sdf: bool = False
    init_radius: float = 0.3
    plane_init_std: float = 1e-3
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class SdfModel:
    """Triplane + positional encoder + SDF/colour network + Laplace density."""

    def __init__(self, config: ModelConfig | None = None, store: ParamStore | None = None):
        self.config = config or ModelConfig()
        cfg = self.config
        self.grid = TriplaneGrid(cfg.resolution, cfg.channels)
        self.enc = PositionalEncoder(cfg.levels)
        self.net = SdfColorNetwork(self.grid.dim + self.enc.dim, cfg.hidden)
        self.density = LaplaceDensity(cfg.beta_init, cfg.beta_min)
        self.beta_learnable = False
        if store is None:
            store = ParamStore()
            rng = np.random.default_rng(cfg.seed)
            self.grid.init_params(store, rng, cfg.plane_init_std)
            pe = self.enc.dim_per_scalar
            raw = [self.grid.dim + k * pe for k in range(3)]
            sign = -1.0 if cfg.negate_sdf else 1.0
            self.net.init_params(store, rng, raw_cols=raw, init_radius=cfg.init_radius,
                                 feature_cols=range(self.grid.dim))
            if sign < 0:
                store.params["sdf_w2"] *= -1.0
                store.params["sdf_b2"] *= -1.0
            self.density.init_params(store)
        self.store = store

    def query(self, tape: Tape, pts: Var, store: ParamStore | None = None) -> tuple[Var, Var]:
        """SDF (inside-positive) and colour at points (N, 3)."""
        store = self.store if store is None else store
        feats = augmented_features(tape, self.grid, store, self.enc, pts)
        s, c = self.net.forward(tape, store, feats)
        if self.config.negate_sdf:
            s = -s
        return s, c

    def beta(self, tape: Tape, store: ParamStore | None = None):
        store = self.store if store is None else store
        return self.density.beta(tape, store, self.beta_learnable)

    def current_beta(self) -> float:
        if self.beta_learnable:
            return self.density.learned_beta(self.store)
        return self.density.beta_init

    def sdf_values(self, pts: np.ndarray, chunk: int = 65536) -> np.ndarray:
        out = np.empty(len(pts))
        for i in range(0, len(pts), chunk):
            tape = Tape(record=False)
            s, _ = self.query(tape, tape.const(pts[i:i + chunk]))
            out[i:i + chunk] = s.value
        return out


# --- analytic oracles -------------------------------------------------------

@dataclass
class Primitive:
    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    half_extents: tuple = (0.5, 0.5, 0.5)
    albedo: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.center = tuple(float(v) for v in self.center)
        self.half_extents = tuple(float(v) for v in self.half_extents)
        self.albedo = tuple(float(v) for v in self.albedo)

    def outside_distance(self, p: np.ndarray) -> np.ndarray:
        q = p - np.asarray(self.center)
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=-1) - self.radius
        q = np.abs(q) - np.asarray(self.half_extents)
        outer = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outer + np.minimum(q.max(axis=-1), 0.0)


@dataclass
class AnalyticSdf:
    """Union of spheres and boxes. Exact signed distance for a single primitive."""

    primitives: list = field(default_factory=list)
    inside_positive: bool = True

    @classmethod
    def sphere(cls, radius=0.5, center=(0.0, 0.0, 0.0), **kw) -> "AnalyticSdf":
        return cls([Primitive("sphere", center=center, radius=radius, **kw)])

    @classmethod
    def box(cls, half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0), **kw) -> "AnalyticSdf":
        return cls([Primitive("box", center=center, half_extents=half_extents, **kw)])

    def _inside_values(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return np.stack([-p.outside_distance(pts) for p in self.primitives], axis=-1)

    def __call__(self, pts) -> np.ndarray:
        s = self._inside_values(pts).max(axis=-1)
        return s if self.inside_positive else -s

    def nearest_primitive(self, pts) -> np.ndarray:
        return self._inside_values(pts).argmax(axis=-1)

    def normals(self, pts, h: float = 1e-5) -> np.ndarray:
        """Outward unit normals by central differences."""
        pts = np.asarray(pts, dtype=np.float64)
        f = lambda q: self._inside_values(q).max(axis=-1)
        g = np.stack([f(pts + h * e) - f(pts - h * e) for e in np.eye(3)], axis=-1)
        g = -g
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        return g / np.maximum(n, 1e-12)


def eval_analytic(sdf: AnalyticSdf, p) -> float:
    return float(sdf(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


class AnalyticField:
    """An analytic SDF dressed as a renderable field (oracle injection).

    Colour is the nearest primitive's albedo under a fixed world-space
    directional light: ``albedo * (ambient + (1 - ambient) * max(0, n.l))``.
    """

    def __init__(self, sdf: AnalyticSdf, beta: float = 0.01, light=(0.4, -0.5, 0.77),
                 ambient: float = 0.35, shading: bool = True):
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.sdf = sdf
        self._beta = float(beta)
        light = np.asarray(light, dtype=np.float64)
        self.light = light / np.linalg.norm(light)
        self.ambient = float(ambient)
        self.shading = shading

    def sdf_values(self, pts: np.ndarray) -> np.ndarray:
        s = self.sdf(pts)
        return s if self.sdf.inside_positive else -s

    def colors(self, pts: np.ndarray) -> np.ndarray:
        albedo = np.array([p.albedo for p in self.sdf.primitives])[self.sdf.nearest_primitive(pts)]
        if not self.shading:
            return albedo
        lam = np.clip(self.sdf.normals(pts) @ self.light, 0.0, None)
        return albedo * (self.ambient + (1.0 - self.ambient) * lam)[..., None]

    def query(self, tape: Tape, pts: Var) -> tuple[Var, Var]:
        p = pts.value
        return tape.const(self.sdf_values(p)), tape.const(self.colors(p))

    def beta(self, tape: Tape):
        return self._beta
