"""Zero-level-set extraction: SDF lattice sampling and marching cubes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_tables import TRI_TABLE
from .geometry import UNIT_CUBE, Aabb, TriangleMesh

# Cube corners (Bourke numbering) as (dx, dy, dz) offsets.
CORNERS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]])
# Edge -> (start offset, axis); every edge runs from start to start + e_axis.
EDGE_START = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0],
                       [0, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 1],
                       [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2])

_MAX_TRI = max(len(r) for r in TRI_TABLE) // 3
_TRIS = np.full((256, _MAX_TRI, 3), -1, dtype=np.int64)
_NTRI = np.zeros(256, dtype=np.int64)
for _case, _row in enumerate(TRI_TABLE):
    _NTRI[_case] = len(_row) // 3
    if _row:
        _TRIS[_case, :_NTRI[_case]] = np.array(_row).reshape(-1, 3)
# Table winding gives normals pointing toward the side below the level.


@dataclass(frozen=True)
class ScalarGrid:
    values: np.ndarray
    bbox: Aabb

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.bbox.max - self.bbox.min) / (np.array(self.values.shape) - 1)

    def node_positions(self, idx) -> np.ndarray:
        return self.bbox.min + np.asarray(idx, dtype=np.float64) * self.spacing


def lattice_points(bbox: Aabb, res: int) -> np.ndarray:
    axes = [np.linspace(bbox.min[i], bbox.max[i], res) for i in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack(g, axis=-1).reshape(-1, 3)


def sample_sdf_grid(sdf, bbox: Aabb = UNIT_CUBE, res: int = 64, chunk: int = 1 << 18,
                    learned: bool | None = None) -> ScalarGrid:
    """SDF values at the corner-aligned ``res^3`` lattice of ``bbox``.

    ``sdf`` is either a callable on (N, 3) arrays or an object with an
    ``sdf_values`` method (learned models, analytic fields).
    """
    if res < 2:
        raise ValueError("res must be >= 2")
    fn = sdf.sdf_values if hasattr(sdf, "sdf_values") else sdf
    if learned is None:
        learned = hasattr(sdf, "grid")
    if learned and (np.any(bbox.min < -1.0) or np.any(bbox.max > 1.0)):
        raise ValueError("bbox must lie inside the triplane extent [-1, 1]^3")
    pts = lattice_points(bbox, res)
    vals = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        vals[i:i + chunk] = fn(pts[i:i + chunk])
    return ScalarGrid(vals.reshape(res, res, res), bbox)


def marching_cubes(grid: ScalarGrid, level: float = 0.0, inside_positive: bool = True) -> TriangleMesh:
    """Triangulate ``{values == level}``.

    Vertices sit on lattice edges at the linear crossing and are shared between
    neighbouring cells.  Normals point toward lower values when
    ``inside_positive`` (outward for an inside-positive SDF), otherwise toward
    higher values.
    """
    v = grid.values - level
    v = np.where(v == 0.0, 1e-12, v)
    below = v < 0
    nx, ny, nz = v.shape
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(CORNERS):
        case |= below[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << bit
    cells = np.flatnonzero(_NTRI[case.ravel()] > 0)
    if cells.size == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cc = case.ravel()[cells]
    ci = np.stack(np.unravel_index(cells, case.shape), axis=1)
    ntri = _NTRI[cc]
    owner = np.repeat(np.arange(len(cells)), ntri)
    slot = np.arange(ntri.sum()) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    tri_edges = _TRIS[cc[owner], slot]                          # (T, 3) local edge ids
    start = ci[owner][:, :, None] + EDGE_START[tri_edges].transpose(0, 2, 1)  # (T, 3, 3)
    axis = EDGE_AXIS[tri_edges]
    gid = ((start[:, 0] * ny + start[:, 1]) * nz + start[:, 2]) * 3 + axis
    uniq, inv = np.unique(gid.ravel(), return_inverse=True)
    node = uniq // 3
    ax = uniq % 3
    a_idx = np.stack(np.unravel_index(node, v.shape), axis=1)
    b_idx = a_idx + np.eye(3, dtype=np.int64)[ax]
    va = v[a_idx[:, 0], a_idx[:, 1], a_idx[:, 2]]
    vb = v[b_idx[:, 0], b_idx[:, 1], b_idx[:, 2]]
    t = va / (va - vb)
    pa, pb = grid.node_positions(a_idx), grid.node_positions(b_idx)
    verts = pa + t[:, None] * (pb - pa)
    faces = inv.reshape(-1, 3)
    if not inside_positive:
        faces = faces[:, ::-1]
    return _clean(verts, faces, grid.spacing.min())


def _clean(verts: np.ndarray, faces: np.ndarray, h: float) -> TriangleMesh:
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    keep = (area > 1e-20 * h * h) & (faces[:, 0] != faces[:, 1]) \
        & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[keep]
    used, remap = np.unique(faces, return_inverse=True)
    return TriangleMesh(verts[used], remap.reshape(-1, 3))


def extract_mesh(sdf, res: int = 256, bbox: Aabb = UNIT_CUBE, level: float = 0.0) -> TriangleMesh:
    return marching_cubes(sample_sdf_grid(sdf, bbox, res), level)
