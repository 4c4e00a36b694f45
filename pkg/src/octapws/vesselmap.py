"""En-face flow map -> clean binary vessel map, depth map, and branch skeleton.

The chain is: collaborative-filter denoise, Phansalkar local threshold,
depth coding, Zhang-Suen thinning, and decomposition of the skeleton into
junction-free branches whose endpoint depths feed the growth metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

SQRT2 = sqrt(2.0)


@dataclass
class DenoiseResult:
    values: np.ndarray
    sigma: float
    passthrough: bool = False


@dataclass
class BinaryVesselMap:
    mask: np.ndarray  # (Y, X) bool
    provenance: dict = field(default_factory=dict)


@dataclass
class VesselDepthMap:
    """Depth below the surface (um) wherever the binary map is true."""

    depth_um: np.ndarray  # (Y, X) float; meaningful only under mask
    mask: np.ndarray  # (Y, X) bool

    def __post_init__(self):
        if self.depth_um.shape != self.mask.shape:
            raise ValueError("depth and mask shapes differ")


@dataclass(frozen=True)
class Branch:
    path: np.ndarray  # (n, 2) int (y, x), ordered along the branch
    endpoint_depths_um: tuple[float, float]
    length_um: float

    @property
    def endpoints(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return tuple(self.path[0]), tuple(self.path[-1])

    @property
    def depth_drop_um(self) -> float:
        a, b = self.endpoint_depths_um
        return abs(a - b)


@dataclass
class VesselSkeleton:
    branches: tuple[Branch, ...]
    junctions: np.ndarray  # (m, 2) int
    n_pruned_px: int = 0  # spur/speck pixels removed before decomposition
    n_dropped_px: int = 0  # zero-length fragments excluded from branches
    degenerate: bool = False

    @property
    def branch_count(self) -> int:
        return len(self.branches)


# ---------------------------------------------------------------------------
# denoising

_BLOCK = 8


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * sqrt(2.0 / n)
    m[0] /= SQRT2
    return m


def _haar_matrix(m: int) -> np.ndarray:
    h = np.array([[1.0]])
    while h.shape[0] < m:
        n = h.shape[0]
        top = np.kron(h, [1.0, 1.0])
        bot = np.kron(np.eye(n), [1.0, -1.0])
        h = np.vstack([top, bot]) / SQRT2
    return h


_DCT8 = _dct_matrix(_BLOCK)
_HAAR = {m: _haar_matrix(m) for m in (1, 2, 4, 8, 16)}


def estimate_noise_sigma(img: np.ndarray) -> float:
    """Noise std from the MAD of the finest diagonal Haar band."""
    x = np.asarray(img, dtype=float)
    h2 = (x.shape[0] // 2) * 2
    w2 = (x.shape[1] // 2) * 2
    if h2 < 2 or w2 < 2:
        return 0.0
    x = x[:h2, :w2]
    hh = (x[0::2, 0::2] - x[0::2, 1::2] - x[1::2, 0::2] + x[1::2, 1::2]) / 2.0
    return float(np.median(np.abs(hh)) / 0.6745)


def denoise(
    img: np.ndarray,
    max_match: int = 16,
    search: int = 24,
    threshold_factor: float = 2.7,
    step: int = 4,
) -> DenoiseResult:
    """Single-stage collaborative filtering on 8x8 blocks.

    For each reference block, up to max_match similar blocks from a
    search x search neighborhood are stacked, transformed (2-D cosine
    basis per block, 1-D Haar across the stack), hard-thresholded at
    threshold_factor * sigma, inverted, and aggregated with uniform
    weights. The stack DC coefficient is never thresholded.
    """
    x = np.asarray(img, dtype=float)
    if x.ndim != 2:
        raise ValueError("denoise expects a 2-d map")
    h, w = x.shape
    if h < _BLOCK or w < _BLOCK:
        return DenoiseResult(x.copy(), 0.0, passthrough=True)
    sigma = estimate_noise_sigma(x)
    if sigma == 0.0:
        return DenoiseResult(x.copy(), 0.0)
    thr = threshold_factor * sigma
    half = search // 2

    blocks = sliding_window_view(x, (_BLOCK, _BLOCK))  # (h-7, w-7, 8, 8)
    nbi, nbj = blocks.shape[:2]
    flat = blocks.reshape(nbi, nbj, _BLOCK * _BLOCK)

    ref_is = sorted(set(range(0, nbi, step)) | {nbi - 1})
    ref_js = sorted(set(range(0, nbj, step)) | {nbj - 1})

    acc = np.zeros_like(x)
    cnt = np.zeros_like(x)
    for i in ref_is:
        i0, i1 = max(0, i - half), min(nbi, i + half + 1)
        for j in ref_js:
            j0, j1 = max(0, j - half), min(nbj, j + half + 1)
            cand = flat[i0:i1, j0:j1].reshape(-1, _BLOCK * _BLOCK)
            ref = flat[i, j]
            d2 = np.einsum("ij,ij->i", cand - ref, cand - ref)
            order = np.argsort(d2, kind="stable")
            m = 1
            while m * 2 <= min(max_match, len(order)):
                m *= 2
            pick = order[:m]
            stack = cand[pick].reshape(m, _BLOCK, _BLOCK)
            # 2-D transform per block, then 1-D across the stack
            t2 = np.einsum("ab,mbc,dc->mad", _DCT8, stack, _DCT8)
            t3 = _HAAR[m] @ t2.reshape(m, -1)
            keep = np.abs(t3) >= thr
            keep[0, 0] = True
            t3 *= keep
            t2 = (_HAAR[m].T @ t3).reshape(m, _BLOCK, _BLOCK)
            est = np.einsum("ba,mbc,cd->mad", _DCT8, t2, _DCT8)
            # scatter the filtered blocks back at their own positions
            rows = i0 + pick // (j1 - j0)
            cols = j0 + pick % (j1 - j0)
            for b, r, c in zip(est, rows, cols):
                acc[r : r + _BLOCK, c : c + _BLOCK] += b
                cnt[r : r + _BLOCK, c : c + _BLOCK] += 1.0
    out = np.where(cnt > 0, acc / np.maximum(cnt, 1.0), x)
    return DenoiseResult(out, sigma)


# ---------------------------------------------------------------------------
# thresholding

def phansalkar_threshold(m, s, p: float = 2.0, q: float = 10.0, k: float = 0.25, R: float = 0.5):
    return m * (1.0 + p * np.exp(-q * m) + k * (s / R - 1.0))


def binarize_phansalkar(
    img: np.ndarray,
    window: int = 15,
    p: float = 2.0,
    q: float = 10.0,
    k: float = 0.25,
    R: float = 0.5,
) -> BinaryVesselMap:
    """Local adaptive threshold tuned for normalized low-contrast maps.

    Pixel true iff value > m*(1 + p*exp(-q*m) + k*(s/R - 1)) with m, s the
    local mean and population std over a window x window neighborhood.
    """
    x = np.asarray(img, dtype=float)
    if x.ndim != 2:
        raise ValueError("binarize expects a 2-d map")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    m = ndimage.uniform_filter(x, size=window, mode="reflect")
    m2 = ndimage.uniform_filter(x * x, size=window, mode="reflect")
    s = np.sqrt(np.maximum(m2 - m * m, 0.0))
    t = phansalkar_threshold(m, s, p, q, k, R)
    return BinaryVesselMap(
        mask=x > t,
        provenance={"window": window, "p": p, "q": q, "k": k, "R": R},
    )


def depth_code(binary: BinaryVesselMap | np.ndarray, depth_um: np.ndarray) -> VesselDepthMap:
    mask = binary.mask if isinstance(binary, BinaryVesselMap) else np.asarray(binary, bool)
    depth = np.asarray(depth_um, dtype=float)
    if mask.shape != depth.shape:
        raise ValueError("binary map and depth map shapes differ")
    return VesselDepthMap(depth_um=np.where(mask, depth, np.nan), mask=mask.copy())


# ---------------------------------------------------------------------------
# skeletonization

def _neighbor_views(padded: np.ndarray):
    # P2..P9 clockwise from north, aligned with padded[1:-1, 1:-1]
    return (
        padded[:-2, 1:-1],
        padded[:-2, 2:],
        padded[1:-1, 2:],
        padded[2:, 2:],
        padded[2:, 1:-1],
        padded[2:, :-2],
        padded[1:-1, :-2],
        padded[:-2, :-2],
    )


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to fixpoint. Output is a subset of the input."""
    m = np.asarray(mask, bool)
    if m.ndim != 2:
        raise ValueError("skeletonize expects a 2-d map")
    img = np.pad(m.astype(np.uint8), 1)
    while True:
        removed = 0
        for step in (0, 1):
            nb = _neighbor_views(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = nb
            b = sum(int_arr.astype(np.int32) for int_arr in nb)
            seq = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
            a = sum(((seq[t] == 0) & (seq[t + 1] == 1)) for t in range(8))
            if step == 0:
                cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            core = img[1:-1, 1:-1]
            delete = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & cond
            core[delete] = 0
            removed += int(delete.sum())
        if removed == 0:
            break
    return img[1:-1, 1:-1].astype(bool)


# ---------------------------------------------------------------------------
# branch decomposition

_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_NB_KERNEL = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def _neighbor_counts(mask: np.ndarray) -> np.ndarray:
    return ndimage.convolve(mask.astype(np.int32), _NB_KERNEL, mode="constant", cval=0) * mask


def _neighbors_in(mask, pt, exclude):
    h, w = mask.shape
    out = []
    for dy, dx in _OFFSETS:
        y, x = pt[0] + dy, pt[1] + dx
        if 0 <= y < h and 0 <= x < w and mask[y, x] and (y, x) not in exclude:
            out.append((y, x))
    return out


def _mutually_connected(pixels) -> bool:
    """True when the pixel set forms a single 8-connected component."""
    if len(pixels) <= 1:
        return True
    todo, rest = {pixels[0]}, set(pixels[1:])
    while todo:
        y, x = todo.pop()
        grab = {p for p in rest if abs(p[0] - y) <= 1 and abs(p[1] - x) <= 1}
        todo |= grab
        rest -= grab
    return not rest


def _trace_from(start, mask, counts):
    """Walk from an endpoint through degree-2 pixels.

    Returns (path, hit_junction). The walk stops at the first junction
    pixel (degree >= 3); that attachment pixel is absorbed into the path
    when the rest of the skeleton stays locally connected without it, so
    pruning a hair cannot leave a dangling junction stub behind.
    """
    path = [start]
    seen = {start}
    cur = start
    while True:
        unvisited = _neighbors_in(mask, cur, seen)
        fan = [p for p in unvisited if counts[p] >= 3]
        if fan:
            if len(unvisited) == 1:
                j = fan[0]
                others = _neighbors_in(mask, j, seen | {j})
                if _mutually_connected(others):
                    path.append(j)
            return path, True
        if not unvisited:
            return path, False
        if len(unvisited) > 1:
            return path, True
        cur = unvisited[0]
        path.append(cur)
        seen.add(cur)
        if counts[cur] == 1:
            return path, False


def _prune_spurs(sk: np.ndarray, min_branch_px: int) -> tuple[np.ndarray, int]:
    """Remove terminal twigs and isolated specks shorter than min_branch_px."""
    out = sk.copy()
    counts = _neighbor_counts(out)
    pruned = 0
    if min_branch_px > 1:
        specks = (counts == 0) & out
        pruned += int(specks.sum())
        out[specks] = False
    ys, xs = np.nonzero((counts == 1) & out)
    visited = set()
    for y, x in zip(ys.tolist(), xs.tolist()):
        if (y, x) in visited or not out[y, x]:
            continue
        path, hit_junction = _trace_from((y, x), out, counts)
        visited.update(path)
        if len(path) < min_branch_px:
            for py, px in path:
                out[py, px] = False
            pruned += len(path)
    return out, pruned


def decompose_branches(
    skeleton: np.ndarray,
    depth: VesselDepthMap | np.ndarray,
    lateral_pitch_um: float,
    min_branch_px: int = 5,
) -> VesselSkeleton:
    """Split a thinned skeleton into junction-free branches.

    Junction pixels have >= 3 skeleton neighbors. Spurs shorter than
    min_branch_px are pruned first; junction pixels are then removed and
    each remaining connected run becomes one branch, ordered end to end.
    Single-pixel leftovers have zero length and are excluded but counted.
    """
    sk = np.asarray(skeleton, bool)
    depth_arr = depth.depth_um if isinstance(depth, VesselDepthMap) else np.asarray(depth, float)
    if sk.shape != depth_arr.shape:
        raise ValueError("skeleton and depth map shapes differ")
    if lateral_pitch_um <= 0:
        raise ValueError("lateral pitch must be positive")

    sk, n_pruned = _prune_spurs(sk, min_branch_px)
    counts = _neighbor_counts(sk)
    junction_mask = counts >= 3
    junctions = np.argwhere(junction_mask)
    body = sk & ~junction_mask

    labels, n_comp = ndimage.label(body, structure=np.ones((3, 3), dtype=int))
    branches: list[Branch] = []
    n_dropped = 0
    for lab in range(1, n_comp + 1):
        comp = labels == lab
        px = np.argwhere(comp)
        if len(px) == 1:
            n_dropped += 1
            continue
        path = _order_component(comp, px)
        steps = np.abs(np.diff(path, axis=0))
        length = float(np.sum(np.where(steps.sum(axis=1) == 2, SQRT2, 1.0))) * lateral_pitch_um
        if length <= 0:
            n_dropped += len(path)
            continue
        d0 = float(depth_arr[path[0, 0], path[0, 1]])
        d1 = float(depth_arr[path[-1, 0], path[-1, 1]])
        branches.append(Branch(path=path, endpoint_depths_um=(d0, d1), length_um=length))

    degenerate = bool(sk.any()) and not branches
    return VesselSkeleton(
        branches=tuple(branches),
        junctions=junctions,
        n_pruned_px=n_pruned,
        n_dropped_px=n_dropped,
        degenerate=degenerate,
    )


def _order_component(comp: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Order a junction-free component's pixels into a path.

    Starts at a pixel with at most one in-component neighbor (a cycle has
    none, so the lexicographically first pixel is used) and walks to
    unvisited neighbors in a fixed direction order.
    """
    counts = ndimage.convolve(comp.astype(np.int32), _NB_KERNEL, mode="constant", cval=0)
    in_set = {tuple(p) for p in px}
    ends = [tuple(p) for p in px if counts[p[0], p[1]] <= 1]
    start = min(ends) if ends else min(map(tuple, px))
    path = [start]
    seen = {start}
    cur = start
    while True:
        nxt = None
        for dy, dx in _OFFSETS:
            cand = (cur[0] + dy, cur[1] + dx)
            if cand in in_set and cand not in seen:
                nxt = cand
                break
        if nxt is None:
            break
        path.append(nxt)
        seen.add(nxt)
        cur = nxt
    return np.array(path, dtype=int)
