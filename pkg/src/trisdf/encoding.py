"""Positional encoding and triplane feature lookup.

Feature layout for a point ``p = (x, y, z)``::

    [F_xy(x, y), F_xz(x, z), F_yz(y, z), PE(x), PE(y), PE(z)]

with ``PE(a) = [a, sin(pi a), cos(pi a), ..., sin(2^(L-1) pi a), cos(2^(L-1) pi a)]``.
Planes are node-aligned over [-1, 1]: coordinate ``a`` maps to grid position
``(a + 1) / 2 * (R - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var

PLANE_AXES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
PLANE_NAMES = ("plane_xy", "plane_xz", "plane_yz")
EXTENT_TOL = 1e-9


@dataclass(frozen=True)
class PositionalEncoder:
    levels: int = 4

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("levels must be non-negative")

    @property
    def dim_per_scalar(self) -> int:
        return 1 + 2 * self.levels

    @property
    def dim(self) -> int:
        return 3 * self.dim_per_scalar

    @property
    def frequencies(self) -> np.ndarray:
        return np.pi * 2.0 ** np.arange(self.levels)


def positional_encode(a: float, levels: int) -> np.ndarray:
    a = float(a)
    if not np.isfinite(a):
        raise ValueError("input must be finite")
    out = [a]
    for k in range(levels):
        out += [np.sin(2.0 ** k * np.pi * a), np.cos(2.0 ** k * np.pi * a)]
    return np.array(out)


def encode_points(pts: Var, enc: PositionalEncoder) -> Var:
    """PE of every coordinate of ``pts`` (N, 3) -> (N, 3 * (1 + 2L))."""
    n = pts.shape[0]
    if enc.levels == 0:
        return pts
    ang = ad.reshape(pts, (n, 3, 1)) * enc.frequencies            # (N, 3, L)
    sc = ad.concat([ad.reshape(ad.sin(ang), (n, 3, enc.levels, 1)),
                    ad.reshape(ad.cos(ang), (n, 3, enc.levels, 1))], axis=3)
    sc = ad.reshape(sc, (n, 3, 2 * enc.levels))
    pe = ad.concat([ad.reshape(pts, (n, 3, 1)), sc], axis=2)
    return ad.reshape(pe, (n, enc.dim))


def _check_extent(*coords: np.ndarray) -> None:
    for c in coords:
        if c.size and (c.min() < -1.0 - EXTENT_TOL or c.max() > 1.0 + EXTENT_TOL):
            raise ValueError("sample point outside the triplane extent [-1, 1]^3")


def _bilinear_setup(a: np.ndarray, b: np.ndarray, res: int):
    ga = (a + 1.0) * 0.5 * (res - 1)
    gb = (b + 1.0) * 0.5 * (res - 1)
    ia = np.clip(np.floor(ga).astype(np.int64), 0, res - 2)
    ib = np.clip(np.floor(gb).astype(np.int64), 0, res - 2)
    fa = ga - ia
    fb = gb - ib
    return ia, ib, fa, fb


def plane_sample(plane: Var, a: Var, b: Var) -> Var:
    """Bilinear lookup of ``plane`` (R, R, C) at coordinates (a, b) in [-1, 1].

    Differentiable with respect to the plane entries and both coordinates.
    """
    pv = plane.value
    res, _, ch = pv.shape
    av, bv = a.value, b.value
    _check_extent(av, bv)
    ia, ib, fa, fb = _bilinear_setup(av, bv, res)
    p00, p10 = pv[ia, ib], pv[ia + 1, ib]
    p01, p11 = pv[ia, ib + 1], pv[ia + 1, ib + 1]
    wa, wb = fa[:, None], fb[:, None]
    out = (1 - wa) * (1 - wb) * p00 + wa * (1 - wb) * p10 + (1 - wa) * wb * p01 + wa * wb * p11
    scale = 0.5 * (res - 1)

    def vjp(g):
        # scatter as a sparse (nodes x points) product, four entries per point
        n = len(fa)
        w = np.stack([(1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb], axis=1)
        nodes = np.stack([ia * res + ib, (ia + 1) * res + ib,
                          ia * res + ib + 1, (ia + 1) * res + ib + 1], axis=1)
        scatter = sparse.csc_matrix((w.ravel(), nodes.ravel(), np.arange(0, 4 * n + 1, 4)),
                                    shape=(res * res, n))
        g_plane = np.asarray(scatter @ g).reshape(res, res, ch)
        da = ((1 - wb) * (p10 - p00) + wb * (p11 - p01)) * scale
        db = ((1 - wa) * (p01 - p00) + wa * (p11 - p10)) * scale
        return g_plane, (g * da).sum(axis=1), (g * db).sum(axis=1)

    return plane.tape.push("plane_sample", out, (plane, a, b), vjp)


class TriplaneGrid:
    """Three R x R x C feature planes over [-1, 1]^3, stored in a ParamStore."""

    def __init__(self, resolution: int = 64, channels: int = 16):
        if resolution < 2 or channels < 1:
            raise ValueError("triplane needs resolution >= 2 and channels >= 1")
        self.resolution = int(resolution)
        self.channels = int(channels)

    @property
    def dim(self) -> int:
        return 3 * self.channels

    def init_params(self, store: ParamStore, rng: np.random.Generator, std: float = 0.0) -> None:
        shape = (self.resolution, self.resolution, self.channels)
        for name in PLANE_NAMES:
            store.add(name, rng.normal(0.0, std, size=shape) if std > 0 else np.zeros(shape))

    def sample(self, tape: Tape, store: ParamStore, pts: Var) -> Var:
        cols = [ad.getitem(pts, (slice(None), i)) for i in range(3)]
        feats = []
        for name, key in zip(PLANE_NAMES, ("xy", "xz", "yz")):
            i, j = PLANE_AXES[key]
            feats.append(plane_sample(tape.param(store, name), cols[i], cols[j]))
        return ad.concat(feats, axis=1)


def triplane_sample(grid: TriplaneGrid, store: ParamStore, p) -> np.ndarray:
    """Feature vector (3C,) at a single point."""
    tape = Tape(record=False)
    pts = tape.const(np.asarray(p, dtype=np.float64).reshape(1, 3))
    return grid.sample(tape, store, pts).value[0]


def augmented_features(tape: Tape, grid: TriplaneGrid, store: ParamStore,
                       enc: PositionalEncoder, pts: Var) -> Var:
    """Triplane features followed by the positional encoding, (N, 3C + 3(1+2L))."""
    return ad.concat([grid.sample(tape, store, pts), encode_points(pts, enc)], axis=1)
