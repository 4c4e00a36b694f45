"""Skin-surface detection, slice flattening, and en-face maximum projection.

The surface is the minimum-cost left-to-right path through a graph whose
weights reward the dark-above/bright-below vertical transition; slices are
flattened along it so depth becomes depth-below-surface, and the flow
volume collapses to an en-face map that keeps the depth of each maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, floor

import numpy as np
from scipy import ndimage

EDGE_EPS = 1e-5


@dataclass
class SurfacePath:
    rows: np.ndarray  # (X,) int, surface row per column
    found: bool
    cost: float = 0.0


@dataclass
class SurfaceMap:
    height_um: np.ndarray  # (Y, X)
    valid: np.ndarray  # (Y,) bool

    def __post_init__(self):
        self.height_um = np.asarray(self.height_um, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != (self.height_um.shape[0],):
            raise ValueError("valid flags must cover each B-scan row")
        ok = self.height_um[self.valid]
        if ok.size and (not np.all(np.isfinite(ok)) or ok.min() < 0.0):
            raise ValueError("surface heights must be finite and >= 0 um")

    @property
    def n_invalid(self) -> int:
        return int(np.count_nonzero(~self.valid))


@dataclass
class EnFaceMap:
    value: np.ndarray  # (Y, X) in [0, 1]
    depth_um: np.ndarray  # (Y, X), depth below surface of the maximizing voxel
    slab_um: tuple[float, float]


def _surface_gradient(values: np.ndarray, smooth_sigma: tuple[float, float]) -> np.ndarray:
    """Dark-above/bright-below transition strength, normalized to [0, 1].

    Backward vertical difference after a light Gaussian, so the score
    peaks on the first bright row (the surface row itself). The slice is
    treated as zero above row 0, matching flatten's zero-fill semantics:
    a boundary already sitting at the top row still scores a transition.
    """
    v = np.asarray(values, dtype=float)
    v = np.concatenate([np.zeros((v.shape[0], 1)), v], axis=1)
    if any(s > 0 for s in smooth_sigma):
        v = ndimage.gaussian_filter(v, sigma=smooth_sigma, mode="nearest")
    g = v[:, 1:] - v[:, :-1]
    np.maximum(g, 0.0, out=g)
    hi = g.max()
    if hi <= 0.0:
        return np.zeros_like(g)
    return g / hi


def detect_surface(
    values: np.ndarray,
    jump_limit: int = 2,
    smooth_sigma: tuple[float, float] = (1.0, 1.0),
) -> SurfacePath:
    """Minimum-cost surface path across one (X, Z) slice.

    Edges connect column c-1 depth a to column c depth b for |a - b| <=
    jump_limit with weight 2 - (g_a + g_b) + eps; the returned path has
    exactly one row per column. An all-zero gradient yields found=False.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("surface detection expects a 2-d (X, Z) slice")
    if jump_limit < 0:
        raise ValueError("jump limit must be >= 0")
    nx, nz = v.shape
    g = _surface_gradient(v, smooth_sigma)
    if g.max() <= 0.0:
        return SurfacePath(np.zeros(nx, dtype=int), found=False)

    # offsets ordered by magnitude so cost ties prefer the flattest move
    offsets = sorted(range(-jump_limit, jump_limit + 1), key=lambda o: (abs(o), o))
    dist = np.zeros(nz)
    parent = np.zeros((nx, nz), dtype=np.int8)
    big = np.inf
    for c in range(1, nx):
        e = dist - g[c - 1]
        best = np.full(nz, big)
        best_off = np.zeros(nz, dtype=np.int8)
        for o in offsets:
            # candidate predecessor row is z + o
            shifted = np.full(nz, big)
            if o >= 0:
                shifted[: nz - o] = e[o:]
            else:
                shifted[-o:] = e[:nz + o]
            take = shifted < best
            best[take] = shifted[take]
            best_off[take] = o
        dist = best + (2.0 + EDGE_EPS - g[c])
        parent[c] = best_off

    z = int(np.argmin(dist))
    total = float(dist[z])
    rows = np.empty(nx, dtype=int)
    rows[nx - 1] = z
    for c in range(nx - 1, 0, -1):
        z = z + int(parent[c, z])
        rows[c - 1] = z
    return SurfacePath(rows, found=True, cost=total)


def flatten(values: np.ndarray, path: np.ndarray) -> np.ndarray:
    """Shift each column up so the surface row lands on row 0; zero-fill below."""
    v = np.asarray(values)
    rows = np.asarray(path, dtype=int)
    nx, nz = v.shape
    if rows.shape != (nx,):
        raise ValueError("surface path must give one row per column")
    if rows.min() < 0 or rows.max() >= nz:
        raise ValueError("surface path leaves the slice")
    out = np.zeros_like(v)
    for x in range(nx):
        p = rows[x]
        out[x, : nz - p] = v[x, p:]
    return out


def unflatten(flat: np.ndarray, path: np.ndarray) -> np.ndarray:
    """Inverse of flatten; rows above the surface come back as zeros."""
    v = np.asarray(flat)
    rows = np.asarray(path, dtype=int)
    nx, nz = v.shape
    if rows.shape != (nx,):
        raise ValueError("surface path must give one row per column")
    out = np.zeros_like(v)
    for x in range(nx):
        p = rows[x]
        out[x, p:] = v[x, : nz - p]
    return out


def mvp(flow_vol: np.ndarray, slab_um: tuple[float, float], axial_pitch_um: float) -> EnFaceMap:
    """Maximum value projection over a surface-relative depth slab.

    flow_vol is (Y, X, Z) with row 0 on the surface (already flattened).
    The depth map records the first (shallowest) maximal row in um; where
    the projected value is 0 the depth defaults to slab top and is masked
    downstream.
    """
    v = np.asarray(flow_vol, dtype=float)
    if v.ndim != 3:
        raise ValueError("mvp expects a flattened (Y, X, Z) volume")
    top, bottom = slab_um
    if not 0 <= top < bottom:
        raise ValueError(f"slab must satisfy 0 <= top < bottom, got {slab_um}")
    if axial_pitch_um <= 0:
        raise ValueError("axial pitch must be positive")
    nz = v.shape[2]
    z0 = ceil(top / axial_pitch_um)
    z1 = min(floor(bottom / axial_pitch_um), nz - 1)
    if z1 < z0:
        raise ValueError(f"slab {slab_um} um contains no rows at pitch {axial_pitch_um}")
    slab = v[:, :, z0 : z1 + 1]
    value = slab.max(axis=2)
    depth = (z0 + slab.argmax(axis=2)) * axial_pitch_um
    depth = np.where(value > 0, depth, float(top))
    return EnFaceMap(value=value, depth_um=depth, slab_um=(float(top), float(bottom)))
