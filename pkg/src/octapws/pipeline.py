"""Per-volume processing chain: repeated B-frames in, maps and metrics out.

Each scan position is independent: register the repeats, build the
structural slice and the classified decorrelation map, trace the surface,
and flatten the flow slice along it. The flattened flow volume is then
projected to an en-face map, denoised, binarized, depth-coded, and
skeletonized, and the six summary metrics are computed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import metrics as met
from .container import OctVolume
from .learn import Sample
from .recon import classify_flow, decorrelation, mean_intensity, register_frames, structural_slice
from .structure import EnFaceMap, SurfaceMap, detect_surface, flatten, mvp
from .vesselmap import (
    BinaryVesselMap,
    VesselDepthMap,
    VesselSkeleton,
    binarize_phansalkar,
    decompose_branches,
    denoise,
    depth_code,
    skeletonize,
)

__all__ = [
    "PipelineConfig",
    "VolumeAnalysis",
    "process_volume",
    "build_learn_sample",
    "analyze_record",
    "cohort_samples",
]


@dataclass(frozen=True)
class PipelineConfig:
    decorr_kernel: tuple[int, int] = (3, 3)
    search: int = 8
    peak_floor: float = 0.2
    k_id: float = 1.0
    c_id: float = 0.05
    jump_limit: int = 2
    smooth_sigma: tuple[float, float] = (1.0, 1.0)
    slab_um: tuple[float, float] = (0.0, 1000.0)
    threshold_window: int = 15
    norm_percentile: float = 90.0  # positive-value percentile mapped to 1.0
    enface_smooth_sigma: float = 0.7  # gaussian taming of boundary raggedness
    min_feature_px: int = 9  # binary components smaller than this are specks
    max_hole_px: int = 25  # enclosed false pockets up to this size are filled
    min_branch_px: int = 5
    noise_floor: float | None = None  # None: take the volume's own floor
    n_frames_keep: int = 4  # structural slices retained per learn sample

    def validate(self):
        if self.search < 0:
            raise ValueError("search must be >= 0")
        top, bottom = self.slab_um
        if not 0 <= top < bottom:
            raise ValueError(f"slab must satisfy 0 <= top < bottom, got {self.slab_um}")
        if self.n_frames_keep < 1:
            raise ValueError("must keep at least one structural frame")
        if self.noise_floor is not None and self.noise_floor <= 0:
            raise ValueError("noise floor override must be positive")
        if not 0 < self.norm_percentile <= 100:
            raise ValueError("norm percentile must be in (0, 100]")
        if self.enface_smooth_sigma < 0:
            raise ValueError("smoothing sigma must be >= 0")
        if self.min_feature_px < 0 or self.max_hole_px < 0:
            raise ValueError("cleanup sizes must be >= 0")

    def as_dict(self) -> dict:
        return {
            "decorr_kernel": list(self.decorr_kernel),
            "search": self.search,
            "peak_floor": self.peak_floor,
            "k_id": self.k_id,
            "c_id": self.c_id,
            "jump_limit": self.jump_limit,
            "smooth_sigma": list(self.smooth_sigma),
            "slab_um": list(self.slab_um),
            "threshold_window": self.threshold_window,
            "norm_percentile": self.norm_percentile,
            "enface_smooth_sigma": self.enface_smooth_sigma,
            "min_feature_px": self.min_feature_px,
            "max_hole_px": self.max_hole_px,
            "min_branch_px": self.min_branch_px,
            "noise_floor": self.noise_floor,
            "n_frames_keep": self.n_frames_keep,
        }


@dataclass
class VolumeAnalysis:
    structural: np.ndarray  # (Y, X, Z) normalized slices
    flow: np.ndarray  # (Y, X, Z) classified decorrelation, flattened
    surface: SurfaceMap
    enface: EnFaceMap
    denoised: np.ndarray  # (Y, X), peak-normalized to [0, 1]
    binary: BinaryVesselMap
    depth: VesselDepthMap
    skeleton_mask: np.ndarray
    skeleton: VesselSkeleton
    metrics: met.MetricRecord
    n_unregistrable: int = 0
    provenance: dict = field(default_factory=dict)


def _thread_count() -> int:
    """Worker cap from OCTA_PWS_THREADS; absent or invalid means serial."""
    raw = os.environ.get("OCTA_PWS_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, min(n, os.cpu_count() or 1))


def _clean_mask(mask: np.ndarray, min_feature_px: int, max_hole_px: int) -> np.ndarray:
    """Binary hygiene: drop speck components, fill small enclosed pockets."""
    m = mask.copy()
    if min_feature_px > 0:
        labels, n = ndimage.label(m, structure=np.ones((3, 3), dtype=int))
        if n:
            sizes = np.bincount(labels.ravel())
            sizes[0] = min_feature_px  # background is not a speck
            m[(sizes < min_feature_px)[labels]] = False
    if max_hole_px > 0:
        # 4-connected false pockets; anything reaching the border is outside
        labels, n = ndimage.label(~m)
        if n:
            border = np.zeros_like(m)
            border[0] = border[-1] = True
            border[:, 0] = border[:, -1] = True
            sizes = np.bincount(labels.ravel())
            fill = sizes <= max_hole_px
            fill[0] = False
            fill[np.unique(labels[border & ~m])] = False
            m[fill[labels]] = True
    return m


def _fill_depths(depth_um: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Depth everywhere, copied from the nearest pixel with a real value.

    Branch endpoints can land on filled pockets where the projected value
    was zero and the depth is a placeholder; those read the closest
    observed depth instead.
    """
    if not valid.any():
        return np.zeros_like(depth_um)
    idx = ndimage.distance_transform_edt(~valid, return_indices=True)[1]
    return depth_um[tuple(idx)]


def _process_scan(frames, axial_um: float, floor: float, cfg: PipelineConfig):
    reg = register_frames(frames, search=cfg.search, peak_floor=cfg.peak_floor)
    intensity = mean_intensity(reg.frames)
    struct = structural_slice(reg.frames)
    d, _flagged = decorrelation(reg.frames, kernel=cfg.decorr_kernel)
    mask = classify_flow(d, intensity, floor, k_id=cfg.k_id, c_id=cfg.c_id)
    flow = np.where(mask, d, 0.0)
    path = detect_surface(struct.values, jump_limit=cfg.jump_limit, smooth_sigma=cfg.smooth_sigma)
    flat = flatten(flow, path.rows) if path.found else flow
    height = path.rows.astype(float) * axial_um
    n_flagged = sum(reg.flags)
    return struct.values, flat, height, path.found, n_flagged


def process_volume(vol: OctVolume, config: PipelineConfig | None = None) -> VolumeAnalysis:
    cfg = config or PipelineConfig()
    cfg.validate()
    floor = cfg.noise_floor if cfg.noise_floor is not None else float(vol.noise_floor)
    if floor <= 0:
        raise ValueError("volume has no noise floor; set PipelineConfig.noise_floor")
    ny, nx, nz, _ = vol.dims
    lat_um, axial_um = vol.pitch

    def worker(y):
        return _process_scan(vol.frames(y), axial_um, floor, cfg)

    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scans = list(pool.map(worker, range(ny)))
    else:
        scans = [worker(y) for y in range(ny)]

    structural = np.stack([s[0] for s in scans])
    flow = np.stack([s[1] for s in scans])
    heights = np.stack([s[2] for s in scans])
    valid = np.array([s[3] for s in scans], dtype=bool)
    n_unreg = int(sum(s[4] for s in scans))
    heights[~valid] = 0.0
    surface = SurfaceMap(height_um=heights, valid=valid)

    enface = mvp(flow, cfg.slab_um, axial_um)
    den = denoise(enface.value)
    # normalize before thresholding: the Phansalkar constants assume
    # full-range [0, 1] input while classified decorrelation tops out well
    # below 1, and a high percentile of the positive values is a stabler
    # ceiling than the maximum
    scaled = np.clip(den.values, 0.0, None)
    if cfg.enface_smooth_sigma > 0:
        # ragged threshold boundaries make the medial axis wander; a mild
        # blur regularizes the edge without moving it
        scaled = ndimage.gaussian_filter(scaled, cfg.enface_smooth_sigma)
    pos = scaled[scaled > 0]
    if pos.size:
        scaled = np.clip(scaled / np.percentile(pos, cfg.norm_percentile), 0.0, 1.0)
    raw_binary = binarize_phansalkar(scaled, window=cfg.threshold_window)
    cleaned = _clean_mask(raw_binary.mask, cfg.min_feature_px, cfg.max_hole_px)
    binary = BinaryVesselMap(
        mask=cleaned,
        provenance={
            **raw_binary.provenance,
            "norm_percentile": cfg.norm_percentile,
            "min_feature_px": cfg.min_feature_px,
            "max_hole_px": cfg.max_hole_px,
        },
    )
    # zero projected values carry the slab-top placeholder depth; keep
    # them out of the depth map
    flow_present = cleaned & (enface.value > 0)
    depth = depth_code(flow_present, enface.depth_um)
    sk_mask = skeletonize(cleaned)
    skeleton = decompose_branches(
        sk_mask,
        _fill_depths(enface.depth_um, flow_present),
        lat_um,
        min_branch_px=cfg.min_branch_px,
    )

    record = met.MetricRecord(
        VD=met.vessel_density(cleaned),
        VC=met.vessel_caliber(cleaned, sk_mask, lat_um),
        VX=met.vessel_complexity(cleaned),
        ST=met.surface_tortuosity(surface.height_um, surface.valid) if valid.any() else None,
        MDV=met.mean_depth_vessels(depth),
        DVG=met.dvg(skeleton),
    )
    return VolumeAnalysis(
        structural=structural,
        flow=flow,
        surface=surface,
        enface=enface,
        denoised=scaled,
        binary=binary,
        depth=depth,
        skeleton_mask=sk_mask,
        skeleton=skeleton,
        metrics=record,
        n_unregistrable=n_unreg,
        provenance={"config": cfg.as_dict(), "denoise_sigma": den.sigma, "pitch_um": list(vol.pitch)},
    )


def build_learn_sample(
    analysis: VolumeAnalysis,
    gender: int,
    age: float,
    patient_id: str,
    label: str,
    archetype_id: int | None = None,
    n_frames: int | None = None,
) -> Sample:
    """Package an analysis as a training sample.

    The image pair is the denoised en-face map plus the vascular depth
    map (NaN off-vessel, absorbed downstream); the auxiliary frames are
    evenly spaced structural slices.
    """
    n = n_frames if n_frames is not None else 4
    ny = analysis.structural.shape[0]
    picks = np.unique(np.linspace(0, ny - 1, min(n, ny)).round().astype(int))
    frames = [analysis.structural[y] for y in picks]
    return Sample(
        enface=analysis.denoised,
        depthmap=analysis.depth.depth_um,
        oct_frames=frames,
        gender=gender,
        age=age,
        patient_id=patient_id,
        label=label,
        archetype_id=archetype_id,
    )


def analyze_record(record, config: PipelineConfig | None = None) -> VolumeAnalysis:
    """Realize one cohort record's volume and run the full chain on it."""
    from .phantom import generate_volume

    vol, _gt = generate_volume(record.spec)
    return process_volume(vol, config)


def cohort_samples(dataset, config: PipelineConfig | None = None, n_frames: int = 4):
    """Process every cohort record into (record, analysis, sample) triples."""
    out = []
    for record in dataset.records:
        analysis = analyze_record(record, config)
        sample = build_learn_sample(
            analysis,
            gender=record.gender,
            age=record.age,
            patient_id=record.patient_id,
            label="P" if record.side == "lesion" else "C",
            archetype_id=record.archetype,
            n_frames=n_frames,
        )
        out.append((record, analysis, sample))
    return out
