"""Spatial types: rays, pinhole cameras, boxes and triangle meshes.

Camera convention: ``pose`` is camera-to-world, the camera looks along its
local +z axis, +x points right in the image and +y points down.  Pixel
``(px, py)`` has its centre at ``(px + 0.5, py + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _vec3(self.origin, "origin")
        d = _vec3(self.direction, "direction")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo, hi = _vec3(self.min, "min"), _vec3(self.max, "max")
        if not np.all(lo < hi):
            raise ValueError("Aabb requires min < max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def cube(cls, half: float = 1.0) -> "Aabb":
        return cls(np.full(3, -half), np.full(3, half))

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return np.all((pts >= self.min - tol) & (pts <= self.max + tol), axis=-1)


UNIT_CUBE = Aabb.cube(1.0)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError("image size must be positive")
        pose = np.array(self.pose, dtype=np.float64).reshape(4, 4)
        rot = pose[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("pose rotation must be orthonormal with determinant +1")
        if not np.allclose(pose[3], [0, 0, 0, 1]):
            raise ValueError("pose must be a rigid 4x4 transform")
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    def translated(self, t) -> "Camera":
        pose = self.pose.copy()
        pose[:3, 3] += np.asarray(t, dtype=np.float64)
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)


def ray_for_pixel(camera: Camera, px: float, py: float) -> Ray:
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise ValueError(f"pixel ({px}, {py}) outside {camera.width}x{camera.height} image")
    d_cam = np.array([(px + 0.5 - camera.cx) / camera.fx, (py + 0.5 - camera.cy) / camera.fy, 1.0])
    d = camera.pose[:3, :3] @ d_cam
    return Ray(camera.center, d / np.linalg.norm(d))


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel, row-major, shape (H*W, 3)."""
    ys, xs = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    d_cam = np.stack([(xs.ravel() + 0.5 - camera.cx) / camera.fx,
                      (ys.ravel() + 0.5 - camera.cy) / camera.fy,
                      np.ones(xs.size)], axis=1)
    d = d_cam @ camera.pose[:3, :3].T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` looking at ``target`` (+z forward, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, fwd, eye
    return pose


def ray_box_bounds(origins, dirs, box: Aabb = UNIT_CUBE, shrink: float = 1e-9):
    """Slab test. Returns (t_near, t_far, hit) with the segment kept inside ``box``."""
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box.min - origins) * inv
        t1 = (box.max - origins) * inv
    lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    t_near = np.maximum(lo.max(axis=1), 0.0)
    t_far = hi.min(axis=1)
    span = t_far - t_near
    hit = span > 4 * shrink
    t_near = t_near + shrink * np.maximum(span, 1.0) * hit
    t_far = t_far - shrink * np.maximum(span, 1.0) * hit
    return t_near, t_far, hit


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must be triangles (N, 3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face with repeated vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edge_counts(self) -> dict:
        """Undirected edge -> number of incident faces."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(uniq, counts)}

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return len(used) - len(self.edge_counts()) + len(self.faces)


def sample_points_on_mesh(mesh: TriangleMesh, n: int, seed: int) -> np.ndarray:
    """Area-weighted uniform surface samples, shape (n, 3)."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas) / total
    tri = np.searchsorted(cdf, rng.random(n), side="right")
    tri = np.minimum(tri, len(areas) - 1)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    u, v = 1.0 - s, s * (1.0 - r2)
    a, b, c = (mesh.vertices[mesh.faces[tri, i]] for i in range(3))
    return u[:, None] * a + v[:, None] * b + (1.0 - u - v)[:, None] * c


def normalize_to_unit_sphere(mesh: TriangleMesh) -> tuple[TriangleMesh, float, np.ndarray]:
    """Centre on the bounding-box centre and scale so the farthest vertex has norm 1.

    Returns ``(mesh', scale, center)`` with ``v' = (v - center) * scale``.
    """
    if len(mesh.vertices) == 0:
        raise ValueError("cannot normalize an empty mesh")
    v = mesh.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max()
    if not radius > 0:
        raise ValueError("mesh has zero extent")
    scale = 1.0 / radius
    return TriangleMesh((v - center) * scale, mesh.faces), scale, center
