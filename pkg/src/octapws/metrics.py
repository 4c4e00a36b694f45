"""Six vascular metrics on en-face products, plus paired percent changes.

VD, VC, VX describe the binary vessel map; ST, MDV, DVG carry depth
information from the detected surface and the vascular-depth map. Metrics
that need a nonempty structure (VC, MDV, DVG) report None when absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np
from scipy import ndimage

from .vesselmap import VesselDepthMap, VesselSkeleton

METRIC_NAMES = ("VD", "VC", "VX", "ST", "MDV", "DVG")

SQRT2 = sqrt(2.0)


@dataclass(frozen=True)
class MetricRecord:
    VD: float | None
    VC: float | None
    VX: float | None
    ST: float | None
    MDV: float | None
    DVG: float | None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class PairedChange:
    """Per-metric percent change of a lesion record vs its paired normal."""

    VD: float | None
    VC: float | None
    VX: float | None
    ST: float | None
    MDV: float | None
    DVG: float | None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def vessel_density(binary: np.ndarray) -> float:
    m = np.asarray(binary, bool)
    if m.size == 0:
        raise ValueError("vessel density needs a non-empty map")
    return float(m.mean())


def skeleton_length_px(skeleton: np.ndarray) -> float:
    """Total path length of a skeleton mask in pixel units.

    Counts 8-neighbor adjacencies once each: orthogonal steps weigh 1,
    diagonal steps sqrt(2). A straight n-pixel line yields n-1.
    """
    s = np.asarray(skeleton, bool)
    ortho = np.count_nonzero(s[:, :-1] & s[:, 1:]) + np.count_nonzero(s[:-1, :] & s[1:, :])
    diag = np.count_nonzero(s[:-1, :-1] & s[1:, 1:]) + np.count_nonzero(s[:-1, 1:] & s[1:, :-1])
    return float(ortho + SQRT2 * diag)


def vessel_caliber(binary: np.ndarray, skeleton: np.ndarray, lateral_pitch_um: float) -> float | None:
    """Mean vessel width: true-pixel area over total skeleton length.

    Thinning retracts a skeleton's open ends into the vessel body, so the
    stepwise length is extended by one pixel per open end (one for an
    isolated pixel); without the end caps, area/length overestimates the
    width of short vessels.
    """
    if lateral_pitch_um <= 0:
        raise ValueError("lateral pitch must be positive")
    m = np.asarray(binary, bool)
    s = np.asarray(skeleton, bool)
    counts = ndimage.convolve(s.astype(np.int32), np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]]), mode="constant", cval=0)
    n_ends = int(np.count_nonzero(s & (counts == 1)))
    n_isolated = int(np.count_nonzero(s & (counts == 0)))
    length_um = (skeleton_length_px(s) + n_ends + n_isolated) * lateral_pitch_um
    if length_um <= 0:
        return None
    area_um2 = float(np.count_nonzero(m)) * lateral_pitch_um**2
    return area_um2 / length_um


_PERIM_KERNEL = np.array([[10, 2, 10], [2, 1, 2], [10, 2, 10]])
_PERIM_WEIGHTS = np.zeros(50)
_PERIM_WEIGHTS[[5, 7, 15, 17, 25, 27]] = 1.0
_PERIM_WEIGHTS[[21, 33]] = SQRT2
_PERIM_WEIGHTS[[13, 23]] = (1.0 + SQRT2) / 2.0


def perimeter_px(mask: np.ndarray) -> float:
    """Boundary length in pixel units by weighted border-configuration counts.

    Border pixels (4-connectivity erosion residue, image edge included)
    are weighted by their local border pattern; straight runs count 1 per
    pixel and staircase diagonals sqrt(2), which tracks true Euclidean
    boundary length far better than raw edge counting.
    """
    m = np.asarray(mask, bool)
    if not m.any():
        return 0.0
    eroded = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    border = m & ~eroded
    conv = ndimage.convolve(border.astype(np.int64), _PERIM_KERNEL, mode="constant", cval=0)
    hist = np.bincount(conv.ravel(), minlength=50)[:50]
    return float(hist @ _PERIM_WEIGHTS)


def vessel_complexity(binary: np.ndarray) -> float | None:
    """Isoperimetric complexity P^2 / (4 pi A); 1.0 for a disk."""
    m = np.asarray(binary, bool)
    area = float(np.count_nonzero(m))
    if area == 0:
        return None
    p = perimeter_px(m)
    return p * p / (4.0 * pi * area)


def surface_tortuosity(heights_um: np.ndarray, valid: np.ndarray | None = None) -> float:
    """Mean over B-scans of the per-scan population std of surface height.

    heights_um is (Y, X); valid flags rows with a trustworthy surface and
    defaults to all rows. Invalid rows are excluded.
    """
    h = np.asarray(heights_um, dtype=float)
    if h.ndim != 2:
        raise ValueError("surface heights must be 2-d (Y, X)")
    if valid is None:
        valid = np.ones(h.shape[0], dtype=bool)
    v = np.asarray(valid, bool)
    if not v.any():
        raise ValueError("no valid B-scans for surface tortuosity")
    return float(h[v].std(axis=1).mean())


def mean_depth_vessels(depth: VesselDepthMap) -> float | None:
    if not depth.mask.any():
        return None
    return float(depth.depth_um[depth.mask].mean())


def dvg(skeleton: VesselSkeleton, mode: str = "per_branch") -> float | None:
    """Degree of vertical growth: endpoint depth drop per unit branch length.

    per_branch (default) averages drop/length over branches; pooled
    divides the summed drops by the summed lengths. Zero-length branches
    are excluded upstream at decomposition.
    """
    if mode not in ("per_branch", "pooled"):
        raise ValueError(f"unknown dvg mode {mode!r}")
    usable = [b for b in skeleton.branches if b.length_um > 0]
    if not usable:
        return None
    if mode == "per_branch":
        return float(np.mean([b.depth_drop_um / b.length_um for b in usable]))
    total_len = sum(b.length_um for b in usable)
    return float(sum(b.depth_drop_um for b in usable) / total_len)


def percent_change(lesion: MetricRecord, normal: MetricRecord) -> PairedChange:
    """100 * (lesion - normal) / |normal| per metric; None when undefined."""
    out = {}
    for name in METRIC_NAMES:
        a = getattr(lesion, name)
        b = getattr(normal, name)
        if a is None or b is None or b == 0:
            out[name] = None
        else:
            out[name] = 100.0 * (a - b) / abs(b)
    return PairedChange(**out)
