"""Point-cloud and mesh reconstruction metrics.

Definitions (A, B point clouds, ``d_AB`` nearest-neighbour distances A -> B):

* chamfer   = (mean d_AB + mean d_BA) / 2, unsquared
* mse       = (mean d_AB^2 + mean d_BA^2) / 2
* msd       = mean of the pooled set d_AB U d_BA
* hausdorff = max(max d_AB, max d_BA)
* emd       = mean matched distance of the optimal one-to-one assignment
              between equal-size random subsamples
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import TriangleMesh, normalize_to_unit_sphere, sample_points_on_mesh

METRIC_NAMES = ("chamfer", "mse", "hausdorff", "emd", "msd")


def _cloud(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise ValueError("point cloud is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError("point cloud has non-finite entries")
    return a


def nn_dists(a, b) -> np.ndarray:
    """Exact Euclidean distance from every point of ``a`` to its nearest point in ``b``."""
    a, b = _cloud(a), _cloud(b)
    d, _ = cKDTree(b).query(a, k=1)
    return d


def _both(a, b):
    return nn_dists(a, b), nn_dists(b, a)


def chamfer(a, b) -> float:
    dab, dba = _both(a, b)
    return 0.5 * (dab.mean() + dba.mean())


def mse(a, b) -> float:
    dab, dba = _both(a, b)
    return 0.5 * ((dab ** 2).mean() + (dba ** 2).mean())


def msd(a, b) -> float:
    dab, dba = _both(a, b)
    return float(np.concatenate([dab, dba]).mean())


def hausdorff(a, b) -> float:
    dab, dba = _both(a, b)
    return float(max(dab.max(), dba.max()))


def emd(a, b, subsample: int = 1024, seed: int = 0) -> float:
    a, b = _cloud(a), _cloud(b)
    if len(a) < subsample or len(b) < subsample:
        raise ValueError(f"both clouds need at least {subsample} points")
    # same seed on both sides: identical clouds give identical subsamples
    sa = a[np.random.default_rng(seed).choice(len(a), subsample, replace=False)]
    sb = b[np.random.default_rng(seed).choice(len(b), subsample, replace=False)]
    return emd_exact(sa, sb)


def emd_exact(a, b) -> float:
    """Optimal assignment mean distance between two equal-size clouds."""
    a, b = _cloud(a), _cloud(b)
    if len(a) != len(b):
        raise ValueError("EMD needs equal-size clouds")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to ``p``; all arrays broadcast to (..., 3)."""
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = (ab * ap).sum(-1), (ac * ap).sum(-1)
    d3, d4 = (ab * bp).sum(-1), (ac * bp).sum(-1)
    d5, d6 = (ab * cp).sum(-1), (ac * cp).sum(-1)
    va, vb, vc = d3 * d6 - d5 * d4, d5 * d2 - d1 * d6, d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        den = va + vb + vc
        out = a + ab * (vb / den)[..., None] + ac * (vc / den)[..., None]
        regions = [
            ((va <= 0) & (d4 >= d3) & (d5 >= d6),
             b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[..., None]),
            ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * (d2 / (d2 - d6))[..., None]),
            ((d6 >= 0) & (d5 <= d6), c),
            ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * (d1 / (d1 - d3))[..., None]),
            ((d3 >= 0) & (d4 <= d3), b),
            ((d1 <= 0) & (d2 <= 0), a),
        ]
    # later entries take precedence (vertex regions before edges before the face)
    for mask, q in regions:
        out = np.where(mask[..., None], q, out)
    return out


def point_mesh_dists(points, mesh: TriangleMesh) -> np.ndarray:
    """Exact Euclidean distance from each point to the surface of ``mesh``.

    Candidate faces are those whose centroid lies within (nearest-vertex
    distance + largest centroid-to-corner radius), which always contains the
    closest face.
    """
    p = _cloud(points)
    if mesh.is_empty:
        raise ValueError("mesh is empty")
    tri = mesh.vertices[mesh.faces]
    cen = tri.mean(axis=1)
    rad = np.linalg.norm(tri - cen[:, None, :], axis=-1).max()
    ub, _ = cKDTree(mesh.vertices).query(p, k=1)
    ctree = cKDTree(cen)
    out = np.empty(len(p))
    for i, cand in enumerate(ctree.query_ball_point(p, ub + rad + 1e-12)):
        t = tri[cand]
        q = _closest_on_triangles(p[i], t[:, 0], t[:, 1], t[:, 2])
        out[i] = np.linalg.norm(q - p[i], axis=-1).min()
    return out


def point_metrics(a, b, emd_subsample: int = 1024, seed: int = 0) -> dict:
    a, b = _cloud(a), _cloud(b)
    dab, dba = _both(a, b)
    return {
        "chamfer": 0.5 * (dab.mean() + dba.mean()),
        "mse": 0.5 * ((dab ** 2).mean() + (dba ** 2).mean()),
        "hausdorff": float(max(dab.max(), dba.max())),
        "emd": emd(a, b, emd_subsample, seed),
        "msd": float(np.concatenate([dab, dba]).mean()),
    }


@dataclass
class MetricReport:
    mean: dict
    std: dict
    n_points: int
    n_repeats: int
    seed: int
    emd_subsample: int
    per_repeat: list = field(default_factory=list)
    version: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def csv_header() -> list[str]:
        cols = ["n_points", "n_repeats", "seed", "emd_subsample"]
        for m in METRIC_NAMES:
            cols += [f"{m}_mean", f"{m}_std"]
        return cols

    def csv_row(self) -> list:
        row = [self.n_points, self.n_repeats, self.seed, self.emd_subsample]
        for m in METRIC_NAMES:
            row += [repr(float(self.mean[m])), repr(float(self.std[m]))]
        return row


REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "mean", "std", "n_points", "n_repeats", "seed", "emd_subsample"],
    "properties": {
        "version": {"const": 1},
        "mean": {"type": "object", "required": list(METRIC_NAMES),
                 "additionalProperties": {"type": "number", "minimum": 0}},
        "std": {"type": "object", "required": list(METRIC_NAMES),
                "additionalProperties": {"type": "number", "minimum": 0}},
        "n_points": {"type": "integer", "minimum": 1},
        "n_repeats": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "emd_subsample": {"type": "integer", "minimum": 1},
        "per_repeat": {"type": "array", "items": {"type": "object"}},
    },
}


def evaluate_meshes(gt: TriangleMesh, pred: TriangleMesh, n: int = 20000, repeats: int = 20,
                    seed: int = 0, emd_subsample: int = 1024) -> MetricReport:
    """Normalise each mesh into the unit sphere, then sample and score ``repeats`` times.

    Both meshes are sampled with the same per-repeat seed, so identical meshes
    score exactly zero.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for name, m in (("gt", gt), ("pred", pred)):
        if m.is_empty or not m.triangle_areas().sum() > 0:
            raise ValueError(f"{name} mesh is empty or has zero area")
    gt_n, _, _ = normalize_to_unit_sphere(gt)
    pred_n, _, _ = normalize_to_unit_sphere(pred)
    ss = np.random.SeedSequence(seed)
    rows = []
    for child in ss.spawn(repeats):
        s_pts, s_emd = (int(x) for x in child.generate_state(2))
        a = sample_points_on_mesh(gt_n, n, s_pts)
        b = sample_points_on_mesh(pred_n, n, s_pts)
        rows.append(point_metrics(a, b, min(emd_subsample, n), s_emd))
    mean = {m: float(np.mean([r[m] for r in rows])) for m in METRIC_NAMES}
    std = {m: float(np.std([r[m] for r in rows])) for m in METRIC_NAMES}
    return MetricReport(mean, std, n, repeats, seed, min(emd_subsample, n),
                        [{m: float(r[m]) for m in METRIC_NAMES} for r in rows])
