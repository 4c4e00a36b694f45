"""Repeated B-frames -> structural cross-section and decorrelation flow map.

Per scan position the repeats are registered by integer translation,
averaged into a log-normalized structural slice, and differenced into a
windowed first-order decorrelation map that an inverse-SNR rule turns
into a flow mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class RegistrationResult:
    frames: list[np.ndarray]
    shifts: list[tuple[int, int]]  # (dx, dz) applied to align each frame
    peaks: list[float]
    flags: list[bool]  # True where the correlation peak was below the floor

    @property
    def any_unregistrable(self) -> bool:
        return any(self.flags)


@dataclass
class StructuralSlice:
    values: np.ndarray  # (X, Z) in [0, 1]
    degenerate: bool = False


@dataclass
class FlowSlice:
    decorrelation: np.ndarray  # (X, Z) in [0, 1]
    mask: np.ndarray  # (X, Z) bool
    flagged: np.ndarray = field(default=None)  # zero-energy windows


def _check_frames(frames) -> list[np.ndarray]:
    fs = [np.asarray(f, dtype=float) for f in frames]
    if len(fs) < 2:
        raise ValueError("need at least 2 repeated frames")
    shape = fs[0].shape
    if any(f.shape != shape for f in fs) or fs[0].ndim != 2:
        raise ValueError("frames must be 2-d and share one shape")
    return fs


def _overlap_views(ref: np.ndarray, mov: np.ndarray, sx: int, sz: int):
    """Views of ref and mov over the region where a (sx, sz)-shifted mov overlaps ref."""
    nx, nz = ref.shape
    x0, x1 = max(0, sx), nx + min(0, sx)
    z0, z1 = max(0, sz), nz + min(0, sz)
    if x1 <= x0 or z1 <= z0:
        return None
    return ref[x0:x1, z0:z1], mov[x0 - sx : x1 - sx, z0 - sz : z1 - sz]


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    am = a - a.mean()
    bm = b - b.mean()
    den = np.sqrt((am * am).sum() * (bm * bm).sum())
    if den == 0.0:
        return 0.0
    # clamp so float drift above 1.0 cannot beat an exact earlier tie
    return float(np.clip((am * bm).sum() / den, -1.0, 1.0))


def _apply_shift(frame: np.ndarray, sx: int, sz: int) -> np.ndarray:
    """Translate with edge replication for uncovered pixels."""
    if sx == 0 and sz == 0:
        return frame.copy()
    nx, nz = frame.shape
    pad = max(abs(sx), abs(sz))
    padded = np.pad(frame, pad, mode="edge")
    return padded[pad - sx : pad - sx + nx, pad - sz : pad - sz + nz].copy()


def register_frames(frames, search: int = 8, peak_floor: float = 0.2) -> RegistrationResult:
    """Align every repeat to the first by exhaustive integer-shift search.

    The applied shift maximizes the Pearson correlation over the overlap;
    candidate shifts are visited smallest-magnitude first so ties resolve
    to the least motion. A peak below peak_floor flags the frame
    unregistrable and passes it through unshifted.
    """
    fs = _check_frames(frames)
    if search < 0:
        raise ValueError("search window must be >= 0")
    candidates = sorted(
        ((sx, sz) for sx in range(-search, search + 1) for sz in range(-search, search + 1)),
        key=lambda s: (abs(s[0]) + abs(s[1]), s),
    )
    ref = fs[0]
    out_frames = [ref.copy()]
    shifts = [(0, 0)]
    peaks = [1.0]
    flags = [False]
    for mov in fs[1:]:
        best, best_r = (0, 0), -np.inf
        for sx, sz in candidates:
            views = _overlap_views(ref, mov, sx, sz)
            if views is None:
                continue
            r = _pearson(*views)
            if r > best_r:
                best, best_r = (sx, sz), r
        if best_r < peak_floor:
            out_frames.append(mov.copy())
            shifts.append((0, 0))
            peaks.append(float(best_r))
            flags.append(True)
        else:
            out_frames.append(_apply_shift(mov, *best))
            shifts.append(best)
            peaks.append(float(best_r))
            flags.append(False)
    return RegistrationResult(out_frames, shifts, peaks, flags)


def mean_intensity(frames) -> np.ndarray:
    """Pixelwise mean of the repeats in linear intensity units."""
    fs = _check_frames(frames)
    return np.mean(fs, axis=0)


def structural_slice(frames) -> StructuralSlice:
    """Average the repeats, log-compress, min-max normalize to [0, 1]."""
    mean = mean_intensity(frames)
    logi = np.log1p(mean)
    lo, hi = float(logi.min()), float(logi.max())
    if hi == lo:
        return StructuralSlice(np.zeros_like(logi), degenerate=True)
    return StructuralSlice((logi - lo) / (hi - lo))


def decorrelation(frames, kernel: tuple[int, int] = (3, 3)) -> tuple[np.ndarray, np.ndarray]:
    """First-order intensity decorrelation between adjacent repeats.

    D = 1 - mean over adjacent pairs of the windowed non-centered
    correlation sum(a*b) / sqrt(sum(a^2) * sum(b^2)); border windows
    shrink to their intersection with the image. Returns (D, flagged)
    where flagged marks zero-energy windows, forced to D = 0 (static
    by convention).
    """
    fs = _check_frames(frames)
    kx, kz = kernel
    if kx < 1 or kz < 1 or kx % 2 == 0 or kz % 2 == 0:
        raise ValueError(f"kernel dims must be odd and positive, got {kernel}")
    d_sum = np.zeros_like(fs[0])
    flagged = np.zeros(fs[0].shape, dtype=bool)
    for a, b in zip(fs[:-1], fs[1:]):
        # constant-0 padding makes each filtered value the sum over the
        # in-image part of the window, up to a common 1/K factor that
        # cancels in the ratio
        sab = ndimage.uniform_filter(a * b, size=kernel, mode="constant")
        saa = ndimage.uniform_filter(a * a, size=kernel, mode="constant")
        sbb = ndimage.uniform_filter(b * b, size=kernel, mode="constant")
        den = np.sqrt(np.clip(saa, 0.0, None) * np.clip(sbb, 0.0, None))
        zero = den <= 0.0
        flagged |= zero
        corr = np.where(zero, 1.0, sab / np.where(zero, 1.0, den))
        d_sum += 1.0 - corr
    d = np.clip(d_sum / (len(fs) - 1), 0.0, 1.0)
    d[flagged] = 0.0
    return d, flagged


def classify_flow(
    d: np.ndarray,
    intensity: np.ndarray,
    noise_floor: float,
    k_id: float = 1.0,
    c_id: float = 0.05,
) -> np.ndarray:
    """Inverse-SNR flow rule on a decorrelation map.

    intensity is the linear-unit mean of the repeats (not the
    log-normalized structural image): iSNR = floor / max(I, floor), and a
    pixel is flow iff D > k_id * iSNR + c_id and I > 3 * floor.
    """
    if noise_floor <= 0:
        raise ValueError("noise floor must be positive")
    d = np.asarray(d, dtype=float)
    i = np.asarray(intensity, dtype=float)
    if d.shape != i.shape:
        raise ValueError("decorrelation and intensity maps must share a shape")
    isnr = noise_floor / np.maximum(i, noise_floor)
    return (d > k_id * isnr + c_id) & (i > 3.0 * noise_floor)
