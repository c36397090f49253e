"""Synthetic scenes: analytic primitives seen from an orbit of pinhole cameras."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .field import AnalyticField, AnalyticSdf, Primitive
from .formats import InputError, write_json, write_manifest, write_mesh, write_png
from .geometry import Camera, look_at
from .meshing import extract_mesh
from .renderer import SamplerConfig, render_image


@dataclass
class OrbitSpec:
    count: int = 50
    radius: float = 3.0
    elevation: tuple = (-60.0, 60.0)
    fov_deg: float = 40.0

    def __post_init__(self):
        self.elevation = tuple(float(e) for e in self.elevation)
        if self.count < 1:
            raise ValueError("orbit needs at least one view")
        if self.radius <= np.sqrt(3.0):
            raise ValueError("orbit radius must keep cameras outside the [-1, 1]^3 box")
        if not (0 < self.fov_deg < 180):
            raise ValueError("fov_deg must lie in (0, 180)")


def orbit_cameras(orbit: OrbitSpec, size: int) -> list[Camera]:
    """Golden-angle azimuths, elevations evenly spread over the requested range."""
    f = 0.5 * size / np.tan(np.radians(orbit.fov_deg) / 2)
    lo, hi = orbit.elevation
    cams = []
    for i in range(orbit.count):
        az = i * np.pi * (3 - np.sqrt(5.0))
        el = np.radians(lo + (hi - lo) * (i + 0.5) / orbit.count)
        eye = orbit.radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera(f, f, size / 2, size / 2, size, size, look_at(eye)))
    return cams


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=lambda: [{"kind": "sphere", "radius": 0.5}])
    orbit: dict = field(default_factory=dict)
    image_size: int = 64
    beta: float = 0.01
    sampler: dict = field(default_factory=lambda: {"n_uniform": 64, "n_importance": 64,
                                                   "jitter": False})
    light: tuple = (0.4, -0.5, 0.77)
    ambient: float = 0.35
    gt_mesh_res: int = 256
    version: int = 1

    def __post_init__(self):
        if self.image_size < 1 or self.beta <= 0 or self.gt_mesh_res < 2:
            raise ValueError("image_size, beta and gt_mesh_res must be positive (res >= 2)")
        self.light = tuple(float(v) for v in self.light)
        prims = self.primitive_objects()
        if not prims:
            raise ValueError("scene needs at least one primitive")
        for p in prims:
            ext = p.radius if p.kind == "sphere" else np.asarray(p.half_extents)
            if np.any(np.abs(np.asarray(p.center)) + ext > 1.0):
                raise ValueError(f"{p.kind} primitive leaves the [-1, 1]^3 box")

    def primitive_objects(self) -> list[Primitive]:
        return [Primitive(**d) for d in self.primitives]

    def orbit_spec(self) -> OrbitSpec:
        return OrbitSpec(**self.orbit)

    def analytic_sdf(self) -> AnalyticSdf:
        return AnalyticSdf(self.primitive_objects())

    def field(self) -> AnalyticField:
        return AnalyticField(self.analytic_sdf(), self.beta, self.light, self.ambient)

    def cameras(self) -> list[Camera]:
        return orbit_cameras(self.orbit_spec(), self.image_size)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(t_near=0.0, t_far=1.0, **self.sampler)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)


SPHERE_SCENE = {"primitives": [{"kind": "sphere", "radius": 0.5, "albedo": [0.85, 0.55, 0.35]}]}
SPHERE_BOX_SCENE = {"primitives": [
    {"kind": "sphere", "center": [-0.3, 0.0, 0.0], "radius": 0.35, "albedo": [0.85, 0.55, 0.35]},
    {"kind": "box", "center": [0.35, 0.0, 0.0], "half_extents": [0.25, 0.25, 0.25],
     "albedo": [0.35, 0.6, 0.85]},
]}
BUILTIN_SCENES = {"sphere": SPHERE_SCENE, "sphere_box": SPHERE_BOX_SCENE}


def render_views(spec: SceneSpec, seed: int = 0):
    """Colour and depth of every orbit view, rendered through the oracle field."""
    fld, cfg = spec.field(), spec.sampler_config()
    views = []
    for k, cam in enumerate(spec.cameras()):
        color, depth, _ = render_image(fld, cam, cfg, seed=seed + k)
        views.append((cam, color, depth))
    return views


def synthesize(spec: SceneSpec, out_dir, seed: int = 0) -> Path:
    """Write ``images/view_XXX.png``, ``manifest.json``, ``gt_mesh.obj`` and ``scene.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    files, cams = [], []
    for k, (cam, color, _) in enumerate(render_views(spec, seed)):
        name = f"view_{k:03d}.png"
        write_png(out / "images" / name, color)
        files.append(name)
        cams.append(cam)
    write_mesh(out / "gt_mesh.obj", extract_mesh(spec.analytic_sdf(), spec.gt_mesh_res))
    write_json(out / "scene.json", spec.to_dict())
    return write_manifest(out / "manifest.json", files, cams,
                          extra={"seed": seed, "gt_mesh": "gt_mesh.obj", "scene": "scene.json"})
