"""Synthetic OCT volumes with embedded vessels and exact ground truth.

The forward model is deliberately simple: a smooth attenuated background
under a parametric surface, multiplicative exponential-intensity speckle
frozen across repeats for static tissue, and per-repeat re-randomized
speckle inside vessels, mixed so the measured pairwise decorrelation hits
a requested level. Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .container import OctVolume
from .metrics import MetricRecord, vessel_complexity

DEFAULT_LATERAL_UM = 8.0
DEFAULT_AXIAL_SPAN_UM = 2100.0


class PhantomSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceSpec:
    """Parametric height field of the skin surface (um from z=0)."""

    base_um: float = 200.0
    # each wave: (amplitude um, cycles over Y, cycles over X, phase rad)
    waves: tuple[tuple[float, float, float, float], ...] = ()
    roughness_um: float = 0.0

    def validate(self):
        if self.base_um < 0:
            raise PhantomSpecError("surface base depth must be >= 0")
        if self.roughness_um < 0:
            raise PhantomSpecError("surface roughness must be >= 0")
        for w in self.waves:
            if len(w) != 4 or w[0] < 0:
                raise PhantomSpecError(f"bad surface wave {w!r}")


@dataclass(frozen=True)
class VesselSpec:
    """A tube of constant radius along a 3-D polyline.

    Control points are (y um, x um, depth um below the local surface);
    the tube follows surface undulations because depth is surface-relative.
    """

    centerline_um: tuple[tuple[float, float, float], ...]
    radius_um: float
    flow_decorrelation: float
    intensity_contrast: float = 1.0
    # calibration-only override of the mixing weight; normal use leaves
    # this None and lets the measured table pick lambda
    mixing_weight: float | None = None

    def validate(self, index: int):
        if len(self.centerline_um) < 2:
            raise PhantomSpecError(f"vessel {index}: centerline needs >= 2 points")
        if self.radius_um <= 0:
            raise PhantomSpecError(f"vessel {index}: radius must be > 0")
        if not 0.0 < self.flow_decorrelation <= 1.0:
            raise PhantomSpecError(f"vessel {index}: flow_decorrelation must be in (0, 1]")
        if self.intensity_contrast <= 0:
            raise PhantomSpecError(f"vessel {index}: intensity contrast must be > 0")
        if self.mixing_weight is not None and not 0.0 <= self.mixing_weight <= 1.0:
            raise PhantomSpecError(f"vessel {index}: mixing weight must be in [0, 1]")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int, int]  # (Y, X, Z, R)
    pitch: tuple[float, float]  # (lateral, axial) um/px
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    vessels: tuple[VesselSpec, ...] = ()
    attenuation_per_mm: float = 1.2
    base_intensity: float = 0.5
    noise_floor: float = 0.01
    seed: int = 0

    def validate(self):
        y, x, z, r = self.dims
        if min(y, x, z, r) < 1 or r < 2:
            raise PhantomSpecError(f"dims must be >= 1 with >= 2 repeats, got {self.dims}")
        if len(self.pitch) != 2 or any(p <= 0 for p in self.pitch):
            raise PhantomSpecError(f"pitches must be positive, got {self.pitch}")
        if self.base_intensity <= 0:
            raise PhantomSpecError("base intensity must be > 0")
        if self.noise_floor < 0:
            raise PhantomSpecError("noise floor must be >= 0")
        if self.attenuation_per_mm < 0:
            raise PhantomSpecError("attenuation must be >= 0")
        self.surface.validate()
        for i, v in enumerate(self.vessels):
            v.validate(i)


def default_phantom_spec(
    dims: tuple[int, int, int, int] = (64, 128, 256, 3),
    lateral_um: float = DEFAULT_LATERAL_UM,
    **kwargs,
) -> PhantomSpec:
    """PhantomSpec with the standard desk-scale geometry.

    The axial pitch is chosen so Z rows span 2.1 mm regardless of Z.
    """
    z = dims[2]
    return PhantomSpec(dims=dims, pitch=(lateral_um, DEFAULT_AXIAL_SPAN_UM / z), **kwargs)


@dataclass(frozen=True)
class PerVessel:
    endpoint_depths_um: tuple[float, float]
    path_length_um: float  # en-face projected arc length of the centerline
    radius_um: float

    @property
    def depth_drop_um(self) -> float:
        a, b = self.endpoint_depths_um
        return abs(a - b)


@dataclass
class GroundTruth:
    vessel_mask: np.ndarray  # (Y, X, Z) bool
    surface_height_um: np.ndarray  # (Y, X)
    per_vessel: tuple[PerVessel, ...]
    true_metrics: MetricRecord


# ---------------------------------------------------------------------------
# decorrelation calibration
#
# Mixing rule per vessel voxel and repeat t: I_t = profile * contrast *
# ((1-lam) * E0 + lam * E_t) with E0 frozen and E_t fresh Exp(1) draws.
# The ensemble first-order decorrelation of that mixture is
# D(lam) = lam^2 / (2 - 2*lam + 2*lam^2), which saturates at 0.5.
# Windowed estimation over small kernels biases the measured value, so
# lambda is looked up in a measured table (scripts/calibrate_decorr.py
# regenerates it: canonical straight vessel, 3x3 kernel, noise-free,
# mean decorrelation over the true mask, 8 seeds).

_CAL_LAMBDA = np.linspace(0.0, 1.0, 21)
_CAL_MEASURED = np.array(
    [0.0, 0.00164, 0.00644, 0.01415, 0.02454, 0.03736, 0.05235, 0.06931, 0.08801, 0.10826, 0.12985, 0.15261, 0.17633, 0.20086, 0.22599, 0.25156, 0.27737, 0.30322, 0.32893, 0.35428, 0.37905]
)


def analytic_decorrelation(lam: np.ndarray) -> np.ndarray:
    """Ensemble first-order decorrelation of the mixing model (ceiling 0.5)."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = lam**2 / (2.0 - 2.0 * lam + 2.0 * lam**2)
    return np.where(lam == 0.0, 0.0, d)


def decorrelation_ceiling() -> float:
    """Largest flow_decorrelation the mixing model can reach."""
    return float(_CAL_MEASURED[-1])


def lambda_for_decorrelation(target: float) -> float:
    """Invert the calibration table; reject unreachable targets."""
    lo = float(_CAL_MEASURED[0])
    hi = float(_CAL_MEASURED[-1])
    if not lo < target <= hi + 1e-9:
        raise PhantomSpecError(
            f"flow_decorrelation {target} outside the attainable range "
            f"({lo:.3f}, {hi:.3f}] of the speckle mixing model"
        )
    return float(np.interp(target, _CAL_MEASURED, _CAL_LAMBDA))


def set_calibration(lam: np.ndarray, measured: np.ndarray) -> None:
    """Install a measured lambda -> decorrelation table (must be increasing)."""
    global _CAL_LAMBDA, _CAL_MEASURED
    lam = np.asarray(lam, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if lam.shape != measured.shape or lam.ndim != 1 or len(lam) < 2:
        raise PhantomSpecError("calibration arrays must be 1-d and equally sized")
    if np.any(np.diff(lam) <= 0) or np.any(np.diff(measured) <= 0):
        raise PhantomSpecError("calibration table must be strictly increasing")
    _CAL_LAMBDA, _CAL_MEASURED = lam, measured


# ---------------------------------------------------------------------------
# geometry

def surface_height_field(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    y, x = spec.dims[0], spec.dims[1]
    yy = np.arange(y)[:, None] / max(y, 1)
    xx = np.arange(x)[None, :] / max(x, 1)
    h = np.full((y, x), spec.surface.base_um, dtype=float)
    for amp, cy, cx, phase in spec.surface.waves:
        h += amp * np.sin(2.0 * np.pi * (cy * yy + cx * xx) + phase)
    if spec.surface.roughness_um > 0:
        from scipy import ndimage

        noise = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (y, x)), sigma=2.0, mode="wrap")
        noise -= noise.mean()  # keep base_um the exact mean height
        std = noise.std()
        if std > 0:
            h += noise * (spec.surface.roughness_um / std)
    return h


def _segment_mask(
    shape: tuple[int, int, int],
    pitch: tuple[float, float],
    height_um: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    radius: float,
) -> np.ndarray:
    """Voxels within radius of segment a-b, in surface-relative um coords."""
    ny, nx, nz = shape
    lat, ax = pitch
    r = radius
    y0 = max(0, int(np.floor((min(a[0], b[0]) - r) / lat)))
    y1 = min(ny - 1, int(np.ceil((max(a[0], b[0]) + r) / lat)))
    x0 = max(0, int(np.floor((min(a[1], b[1]) - r) / lat)))
    x1 = min(nx - 1, int(np.ceil((max(a[1], b[1]) + r) / lat)))
    if y1 < y0 or x1 < x0:
        return np.zeros(shape, dtype=bool)
    hbox = height_um[y0 : y1 + 1, x0 : x1 + 1]
    dmin = min(a[2], b[2]) - r
    dmax = max(a[2], b[2]) + r
    z0 = max(0, int(np.floor((hbox.min() + dmin) / ax)))
    z1 = min(nz - 1, int(np.ceil((hbox.max() + dmax) / ax)))
    if z1 < z0:
        return np.zeros(shape, dtype=bool)

    ys = (np.arange(y0, y1 + 1) * lat)[:, None, None]
    xs = (np.arange(x0, x1 + 1) * lat)[None, :, None]
    zs = (np.arange(z0, z1 + 1) * ax)[None, None, :]
    depth = zs - hbox[:, :, None]
    py = np.broadcast_to(ys, depth.shape)
    px = np.broadcast_to(xs, depth.shape)

    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        dy, dx_, dz = py - a[0], px - a[1], depth - a[2]
        dist2 = dy * dy + dx_ * dx_ + dz * dz
    else:
        t = ((py - a[0]) * d[0] + (px - a[1]) * d[1] + (depth - a[2]) * d[2]) / dd
        np.clip(t, 0.0, 1.0, out=t)
        dy = py - (a[0] + t * d[0])
        dx_ = px - (a[1] + t * d[1])
        dz = depth - (a[2] + t * d[2])
        dist2 = dy * dy + dx_ * dx_ + dz * dz
    inside = (dist2 <= r * r) & (depth >= 0.0)
    mask = np.zeros(shape, dtype=bool)
    mask[y0 : y1 + 1, x0 : x1 + 1, z0 : z1 + 1] = inside
    return mask


def vessel_mask(spec: PhantomSpec, vessel: VesselSpec, height_um: np.ndarray) -> np.ndarray:
    ny, nx, nz = spec.dims[0], spec.dims[1], spec.dims[2]
    pts = np.asarray(vessel.centerline_um, dtype=float)
    mask = np.zeros((ny, nx, nz), dtype=bool)
    for a, b in zip(pts[:-1], pts[1:]):
        mask |= _segment_mask((ny, nx, nz), spec.pitch, height_um, a, b, vessel.radius_um)
    return mask


def _validate_vessel_bounds(spec: PhantomSpec, height_um: np.ndarray) -> None:
    y, x, z, _ = spec.dims
    lat, ax = spec.pitch
    ymax, xmax = (y - 1) * lat, (x - 1) * lat
    zmax = (z - 1) * ax
    hmax = float(height_um.max())
    for i, v in enumerate(spec.vessels):
        for py, px, pd in v.centerline_um:
            if not (0.0 <= py <= ymax and 0.0 <= px <= xmax):
                raise PhantomSpecError(
                    f"vessel {i}: centerline point ({py}, {px}) outside the lateral bounds"
                )
            if pd - v.radius_um < 0.0:
                raise PhantomSpecError(f"vessel {i}: tube crosses the surface (depth {pd})")
            if hmax + pd + v.radius_um > zmax:
                raise PhantomSpecError(
                    f"vessel {i}: tube bottom at {hmax + pd + v.radius_um:.0f} um exceeds "
                    f"the axial extent {zmax:.0f} um"
                )


# ---------------------------------------------------------------------------
# generation

def generate_volume(spec: PhantomSpec) -> tuple[OctVolume, GroundTruth]:
    """Render the spec into repeats plus exact ground truth.

    Deterministic per seed. Static voxels share one speckle draw across
    repeats; vessel voxels mix the frozen draw with fresh per-repeat
    draws at the calibrated mixing weight for their target decorrelation.
    """
    spec.validate()
    ny, nx, nz, nr = spec.dims
    lat, ax = spec.pitch
    ss = np.random.SeedSequence(spec.seed)
    rng_surface, rng_static, rng_flow, rng_noise = [np.random.default_rng(s) for s in ss.spawn(4)]

    height = surface_height_field(spec, rng_surface)
    if height.min() < 0 or height.max() > nz * ax:
        raise PhantomSpecError("surface height leaves the axial extent")
    _validate_vessel_bounds(spec, height)

    zs_um = np.arange(nz) * ax
    depth_um = zs_um[None, None, :] - height[:, :, None]
    tissue = depth_um >= 0.0
    profile = np.where(
        tissue,
        spec.base_intensity * np.exp(-spec.attenuation_per_mm * np.maximum(depth_um, 0.0) / 1000.0),
        0.0,
    )

    masks = [vessel_mask(spec, v, height) for v in spec.vessels]
    lams = [
        v.mixing_weight if v.mixing_weight is not None else lambda_for_decorrelation(v.flow_decorrelation)
        for v in spec.vessels
    ]

    frozen = rng_static.exponential(1.0, (ny, nx, nz))
    static = profile * frozen

    data = np.empty((ny, nx, nr, nz), dtype=float)
    for r in range(nr):
        frame = static.copy()
        for v, m, lam in zip(spec.vessels, masks, lams):
            fresh = rng_flow.exponential(1.0, int(m.sum()))
            mix = (1.0 - lam) * frozen[m] + lam * fresh
            frame[m] = profile[m] * v.intensity_contrast * mix
        if spec.noise_floor > 0:
            frame = frame + rng_noise.normal(0.0, spec.noise_floor, frame.shape)
            np.maximum(frame, 0.0, out=frame)
        data[:, :, r, :] = frame

    union = np.zeros((ny, nx, nz), dtype=bool)
    for m in masks:
        union |= m
    per_vessel = tuple(_per_vessel(v) for v in spec.vessels)
    gt = GroundTruth(
        vessel_mask=union,
        surface_height_um=height,
        per_vessel=per_vessel,
        true_metrics=None,
    )
    gt.true_metrics = true_metrics(gt, spec.pitch)
    vol = OctVolume(data=data, pitch=spec.pitch, seed=spec.seed, noise_floor=spec.noise_floor)
    return vol, gt


def _per_vessel(v: VesselSpec) -> PerVessel:
    pts = np.asarray(v.centerline_um, dtype=float)
    steps = np.diff(pts[:, :2], axis=0)
    length = float(np.sqrt((steps**2).sum(axis=1)).sum())
    return PerVessel(
        endpoint_depths_um=(float(pts[0, 2]), float(pts[-1, 2])),
        path_length_um=length,
        radius_um=float(v.radius_um),
    )


def true_metrics(gt: GroundTruth, pitch: tuple[float, float]) -> MetricRecord:
    """Analytic / mask-derived metric values for one phantom."""
    lat, ax = pitch
    footprint = gt.vessel_mask.any(axis=2)
    vd = float(footprint.mean())
    if gt.per_vessel:
        vc = 2.0 * float(np.mean([pv.radius_um for pv in gt.per_vessel]))
        drops = [pv.depth_drop_um / pv.path_length_um for pv in gt.per_vessel if pv.path_length_um > 0]
        dvg = float(np.mean(drops)) if drops else None
    else:
        vc = None
        dvg = None
    vx = vessel_complexity(footprint) if footprint.any() else None
    st = float(gt.surface_height_um.std(axis=1).mean())
    if footprint.any():
        zs_um = np.arange(gt.vessel_mask.shape[2]) * ax
        depth = zs_um[None, None, :] - gt.surface_height_um[:, :, None]
        col_sums = np.where(gt.vessel_mask, depth, 0.0).sum(axis=2)
        col_counts = gt.vessel_mask.sum(axis=2)
        col_mean = np.where(col_counts > 0, col_sums / np.maximum(col_counts, 1), 0.0)
        mdv = float(col_mean[footprint].mean())
    else:
        mdv = None
    return MetricRecord(VD=vd, VC=vc, VX=vx, ST=st, MDV=mdv, DVG=dvg)


# ---------------------------------------------------------------------------
# cohort generation

@dataclass(frozen=True)
class PhantomTemplate:
    """Parametric sampler of PhantomSpec instances for one appearance class.

    Scalar-pair fields are inclusive (lo, hi) sampling ranges; every ROI
    drawn from a template shares its characteristic vessel counts, radii,
    depths, and surface relief but has its own layout and speckle.
    """

    dims: tuple[int, int, int, int] = (48, 64, 128, 3)
    lateral_um: float = DEFAULT_LATERAL_UM
    axial_span_um: float = DEFAULT_AXIAL_SPAN_UM
    base_depth_um: tuple[float, float] = (140.0, 180.0)
    n_waves: int = 0
    wave_amp_um: tuple[float, float] = (0.0, 0.0)
    wave_cycles: tuple[float, float] = (1.0, 3.0)
    roughness_um: tuple[float, float] = (0.0, 0.0)
    n_vessels: tuple[int, int] = (3, 5)
    radius_um: tuple[float, float] = (20.0, 30.0)
    depth_um: tuple[float, float] = (250.0, 400.0)
    depth_drop_um: tuple[float, float] = (0.0, 40.0)
    decorrelation: tuple[float, float] = (0.25, 0.34)
    contrast: tuple[float, float] = (1.3, 1.7)
    attenuation_per_mm: float = 1.2
    base_intensity: float = 0.5
    noise_floor: float = 0.008

    @property
    def pitch(self) -> tuple[float, float]:
        return (self.lateral_um, self.axial_span_um / self.dims[2])

    def sample(self, seed: int) -> PhantomSpec:
        rng = np.random.default_rng(seed)
        u = lambda lo_hi: float(rng.uniform(*lo_hi))  # noqa: E731

        def u_span(lo, hi):
            # degenerate spans (margins beyond a small FOV) collapse to center
            if lo > hi:
                return (lo + hi) / 2.0
            return float(rng.uniform(lo, hi))

        waves = []
        for _ in range(self.n_waves):
            amp = u(self.wave_amp_um)
            cycles = u(self.wave_cycles)
            frac = float(rng.uniform(0.0, 1.0))
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            waves.append((amp, cycles * frac, cycles * (1.0 - frac), phase))
        surface = SurfaceSpec(
            base_um=u(self.base_depth_um),
            waves=tuple(waves),
            roughness_um=u(self.roughness_um),
        )

        ny, nx, nz, _ = self.dims
        lat = self.lateral_um
        yext, xext = (ny - 1) * lat, (nx - 1) * lat
        vessels = []
        n = int(rng.integers(self.n_vessels[0], self.n_vessels[1] + 1))
        d_lo = max(self.depth_um[0], 1.0)
        for _ in range(n):
            radius = u(self.radius_um)
            margin = radius + lat
            d0 = u(self.depth_um)
            drop = u(self.depth_drop_um) * float(rng.choice((-1.0, 1.0)))
            d1 = float(np.clip(d0 + drop, max(radius + 10.0, d_lo * 0.5), self.depth_um[1] + self.depth_drop_um[1]))
            along_x = bool(rng.integers(0, 2))
            if along_x:
                x0, x1 = min(margin, xext / 2.0), max(xext - margin, xext / 2.0)
                y0 = u_span(margin, yext - margin)
                y1 = u_span(margin, yext - margin)
                pts = ((y0, x0, d0), ((y0 + y1) / 2.0 + float(rng.uniform(-4 * lat, 4 * lat)), (x0 + x1) / 2.0, (d0 + d1) / 2.0), (y1, x1, d1))
            else:
                y0, y1 = min(margin, yext / 2.0), max(yext - margin, yext / 2.0)
                x0 = u_span(margin, xext - margin)
                x1 = u_span(margin, xext - margin)
                pts = ((y0, x0, d0), ((y0 + y1) / 2.0, (x0 + x1) / 2.0 + float(rng.uniform(-4 * lat, 4 * lat)), (d0 + d1) / 2.0), (y1, x1, d1))
            pts = tuple((float(np.clip(p[0], 0.0, yext)), float(np.clip(p[1], 0.0, xext)), p[2]) for p in pts)
            vessels.append(
                VesselSpec(
                    centerline_um=pts,
                    radius_um=radius,
                    flow_decorrelation=u(self.decorrelation),
                    intensity_contrast=u(self.contrast),
                )
            )
        return PhantomSpec(
            dims=self.dims,
            pitch=self.pitch,
            surface=surface,
            vessels=tuple(vessels),
            attenuation_per_mm=self.attenuation_per_mm,
            base_intensity=self.base_intensity,
            noise_floor=self.noise_floor,
            seed=int(np.random.SeedSequence(seed).generate_state(1)[0]),
        )


@dataclass(frozen=True)
class CohortSpec:
    """Paired lesion/normal ROI cohort over hidden appearance archetypes."""

    n_patients: int
    rois_per_patient: int
    archetypes: tuple[tuple[PhantomTemplate, PhantomTemplate], ...]  # (lesion, normal)
    covariates: tuple[tuple[int, float], ...] | None = None  # per-patient (gender, age)
    seed: int = 0

    def validate(self):
        if self.n_patients < 1:
            raise PhantomSpecError("cohort needs at least one patient")
        if not 4 <= self.rois_per_patient <= 6:
            raise PhantomSpecError(
                f"rois_per_patient must be in [4, 6], got {self.rois_per_patient}"
            )
        if len(self.archetypes) < 2:
            raise PhantomSpecError("cohort needs at least two archetypes")
        for pair in self.archetypes:
            if len(pair) != 2:
                raise PhantomSpecError("each archetype must pair a lesion and a normal template")
        if self.covariates is not None and len(self.covariates) != self.n_patients:
            raise PhantomSpecError("covariates must list one (gender, age) per patient")


@dataclass(frozen=True)
class RoiRecord:
    record_id: str
    patient_id: str
    roi: int
    side: str  # "lesion" | "normal"
    archetype: int
    gender: int
    age: float
    spec: PhantomSpec


@dataclass
class CohortDataset:
    spec: CohortSpec
    records: tuple[RoiRecord, ...]

    def realize(self, record: RoiRecord) -> tuple[OctVolume, GroundTruth]:
        return generate_volume(record.spec)

    def lesion_records(self) -> list[RoiRecord]:
        return [r for r in self.records if r.side == "lesion"]

    def manifest(self) -> dict:
        from dataclasses import asdict

        return {
            "kind": "cohort",
            "seed": self.spec.seed,
            "n_patients": self.spec.n_patients,
            "rois_per_patient": self.spec.rois_per_patient,
            "n_archetypes": len(self.spec.archetypes),
            "records": [
                {
                    "record_id": r.record_id,
                    "patient_id": r.patient_id,
                    "roi": r.roi,
                    "side": r.side,
                    "archetype": r.archetype,
                    "gender": r.gender,
                    "age": r.age,
                    "spec": asdict(r.spec),
                }
                for r in self.records
            ],
        }


def generate_cohort(spec: CohortSpec) -> CohortDataset:
    """Expand a cohort spec into per-ROI records, deterministically.

    Patients round-robin over archetypes; every ROI samples a fresh
    concrete PhantomSpec from its archetype's template via a seed derived
    from (cohort seed, patient, roi, side).
    """
    spec.validate()
    cov_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xC0FFEE)))
    records = []
    for p in range(spec.n_patients):
        archetype = p % len(spec.archetypes)
        if spec.covariates is not None:
            gender, age = spec.covariates[p]
        else:
            gender = int(cov_rng.integers(0, 2))
            age = round(float(cov_rng.uniform(5.0, 65.0)), 1)
        lesion_tpl, normal_tpl = spec.archetypes[archetype]
        pid = f"P{p:03d}"
        for roi in range(spec.rois_per_patient):
            for side_idx, (side, tpl) in enumerate((("lesion", lesion_tpl), ("normal", normal_tpl))):
                sample_seed = int(
                    np.random.SeedSequence((spec.seed, p, roi, side_idx)).generate_state(1)[0]
                )
                records.append(
                    RoiRecord(
                        record_id=f"{pid}-R{roi}-{side[0].upper()}",
                        patient_id=pid,
                        roi=roi,
                        side=side,
                        archetype=archetype,
                        gender=int(gender),
                        age=float(age),
                        spec=tpl.sample(sample_seed),
                    )
                )
    return CohortDataset(spec=spec, records=tuple(records))
