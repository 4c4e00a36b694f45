"""Tests for the speckle phantom: geometry, statistics, and cohorts."""

import numpy as np
import pytest

from octapws import phantom, recon
from octapws.container import canonical_json
from octapws.phantom import (
    CohortSpec,
    PhantomSpec,
    PhantomSpecError,
    PhantomTemplate,
    SurfaceSpec,
    VesselSpec,
    analytic_decorrelation,
    decorrelation_ceiling,
    default_phantom_spec,
    generate_cohort,
    generate_volume,
    lambda_for_decorrelation,
    surface_height_field,
    vessel_mask,
)


def brute_force_vessel_mask(spec, vessel, height_um):
    """Point-in-tube test with explicit loops over voxels and segments."""
    ny, nx, nz, _ = spec.dims
    lat, ax = spec.pitch
    pts = np.asarray(vessel.centerline_um, dtype=float)
    out = np.zeros((ny, nx, nz), dtype=bool)
    for y in range(ny):
        for x in range(nx):
            for z in range(nz):
                depth = z * ax - height_um[y, x]
                if depth < 0:
                    continue
                p = np.array([y * lat, x * lat, depth])
                for a, b in zip(pts[:-1], pts[1:]):
                    d = b - a
                    denom = float(d @ d)
                    t = 0.0 if denom == 0 else float(np.clip((p - a) @ d / denom, 0.0, 1.0))
                    if np.linalg.norm(p - (a + t * d)) <= vessel.radius_um:
                        out[y, x, z] = True
                        break
    return out


def straight_vessel_spec(
    dims=(10, 24, 60, 3),
    radius=20.0,
    depth=(300.0, 300.0),
    base=100.0,
    target_d=0.30,
    noise=0.0,
    seed=5,
    axial_pitch=10.0,
    **kwargs,
):
    lat = 8.0
    y_mid = (dims[0] - 1) * lat / 2.0
    x_end = (dims[1] - 1) * lat
    return PhantomSpec(
        dims=dims,
        pitch=(lat, axial_pitch),
        surface=SurfaceSpec(base_um=base),
        vessels=(
            VesselSpec(
                centerline_um=((y_mid, 0.0, depth[0]), (y_mid, x_end, depth[1])),
                radius_um=radius,
                flow_decorrelation=target_d,
            ),
        ),
        noise_floor=noise,
        seed=seed,
        **kwargs,
    )


class TestSpecValidation:
    def test_defaults_valid(self):
        default_phantom_spec().validate()

    def test_too_few_repeats_rejected(self):
        with pytest.raises(PhantomSpecError):
            default_phantom_spec(dims=(8, 8, 32, 1)).validate()

    def test_negative_radius_rejected(self):
        v = VesselSpec(
            centerline_um=((0.0, 0.0, 300.0), (0.0, 100.0, 300.0)),
            radius_um=-1.0,
            flow_decorrelation=0.2,
        )
        with pytest.raises(PhantomSpecError):
            v.validate(0)

    def test_short_centerline_rejected(self):
        v = VesselSpec(
            centerline_um=((0.0, 0.0, 300.0),),
            radius_um=10.0,
            flow_decorrelation=0.2,
        )
        with pytest.raises(PhantomSpecError):
            v.validate(0)

    def test_vessel_breaking_surface_named_in_error(self):
        spec = straight_vessel_spec(depth=(10.0, 10.0), radius=20.0)
        with pytest.raises(PhantomSpecError, match="vessel 0"):
            generate_volume(spec)

    def test_vessel_below_volume_named_in_error(self):
        spec = straight_vessel_spec(depth=(50_000.0, 50_000.0))
        with pytest.raises(PhantomSpecError, match="vessel 0"):
            generate_volume(spec)

    def test_lateral_overflow_rejected(self):
        spec = straight_vessel_spec()
        bad = VesselSpec(
            centerline_um=((0.0, 0.0, 300.0), (0.0, 1e6, 300.0)),
            radius_um=10.0,
            flow_decorrelation=0.2,
        )
        spec = PhantomSpec(
            dims=spec.dims, pitch=spec.pitch, surface=spec.surface,
            vessels=(bad,), seed=1,
        )
        with pytest.raises(PhantomSpecError, match="vessel 0"):
            generate_volume(spec)


class TestCalibration:
    def test_analytic_curve_endpoints(self):
        assert analytic_decorrelation(0.0) == 0.0
        assert analytic_decorrelation(1.0) == pytest.approx(0.5)

    def test_analytic_curve_monotone(self):
        lam = np.linspace(0.0, 1.0, 101)
        d = analytic_decorrelation(lam)
        assert np.all(np.diff(d) > 0)

    def test_table_round_trip(self):
        for lam, meas in zip(phantom._CAL_LAMBDA[1:], phantom._CAL_MEASURED[1:]):
            assert lambda_for_decorrelation(float(meas)) == pytest.approx(float(lam), abs=1e-9)

    def test_out_of_range_targets_rejected(self):
        for bad in (0.0, -0.1, decorrelation_ceiling() + 0.01, 0.5):
            with pytest.raises(PhantomSpecError):
                lambda_for_decorrelation(bad)

    def test_set_calibration_requires_increasing(self):
        with pytest.raises(PhantomSpecError):
            phantom.set_calibration(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.3, 0.2]))


class TestSurface:
    def test_flat_surface(self):
        spec = default_phantom_spec(dims=(8, 12, 64, 2), surface=SurfaceSpec(base_um=250.0))
        h = surface_height_field(spec, np.random.default_rng(0))
        np.testing.assert_array_equal(h, 250.0)

    def test_wave_statistics(self):
        a = 40.0
        spec = default_phantom_spec(
            dims=(16, 64, 64, 2),
            surface=SurfaceSpec(base_um=300.0, waves=((a, 0.0, 4.0, 0.0),)),
        )
        h = surface_height_field(spec, np.random.default_rng(0))
        assert h.mean() == pytest.approx(300.0, abs=1e-9)
        assert h.max() == pytest.approx(300.0 + a, abs=a * 0.01)
        assert h[0].std() == pytest.approx(a / np.sqrt(2.0), rel=1e-9)

    def test_roughness_scaled_to_requested_std(self):
        spec = default_phantom_spec(
            dims=(32, 32, 64, 2), surface=SurfaceSpec(base_um=200.0, roughness_um=12.0)
        )
        h = surface_height_field(spec, np.random.default_rng(1))
        assert h.std() == pytest.approx(12.0, rel=1e-9)
        assert h.mean() == pytest.approx(200.0, abs=3.0)


class TestVesselGeometry:
    def test_mask_matches_brute_force(self):
        spec = straight_vessel_spec(dims=(10, 16, 48, 2))
        h = surface_height_field(spec, np.random.default_rng(0))
        fast = vessel_mask(spec, spec.vessels[0], h)
        slow = brute_force_vessel_mask(spec, spec.vessels[0], h)
        np.testing.assert_array_equal(fast, slow)

    def test_bent_vessel_matches_brute_force(self):
        spec = default_phantom_spec(
            dims=(12, 16, 48, 2),
            surface=SurfaceSpec(base_um=120.0),
            vessels=(
                VesselSpec(
                    centerline_um=((8.0, 0.0, 250.0), (40.0, 60.0, 300.0), (80.0, 118.0, 420.0)),
                    radius_um=25.0,
                    flow_decorrelation=0.2,
                ),
            ),
            seed=2,
        )
        h = surface_height_field(spec, np.random.default_rng(0))
        v = spec.vessels[0]
        np.testing.assert_array_equal(
            vessel_mask(spec, v, h), brute_force_vessel_mask(spec, v, h)
        )

    def test_wavy_surface_mask_matches_brute_force(self):
        spec = straight_vessel_spec(dims=(10, 16, 56, 2))
        spec = PhantomSpec(
            dims=spec.dims, pitch=spec.pitch,
            surface=SurfaceSpec(base_um=150.0, waves=((30.0, 1.0, 2.0, 0.7),)),
            vessels=spec.vessels, seed=3,
        )
        h = surface_height_field(spec, np.random.default_rng(0))
        v = spec.vessels[0]
        np.testing.assert_array_equal(
            vessel_mask(spec, v, h), brute_force_vessel_mask(spec, v, h)
        )

    def test_flattened_row_band(self):
        # radius 20 um at constant 300 um depth, 10 um axial pitch:
        # surface-relative rows 28..32 inclusive. Y = 11 puts the axis
        # exactly on row 5 (y_mid = 40 um), so the probe column sees the
        # full diameter.
        spec = straight_vessel_spec(dims=(11, 24, 60, 3), base=100.0, seed=4)
        _, gt = generate_volume(spec)
        surf_row = int(round(100.0 / 10.0))
        zs = np.nonzero(gt.vessel_mask[5, 12])[0]
        rel = zs - surf_row
        assert rel.min() == 28
        assert rel.max() == 32


class TestVolumeStatistics:
    def test_bit_reproducible(self):
        spec = straight_vessel_spec(noise=0.01)
        v1, _ = generate_volume(spec)
        v2, _ = generate_volume(spec)
        np.testing.assert_array_equal(v1.data, v2.data)

    def test_seed_changes_realization(self):
        spec = straight_vessel_spec(noise=0.01, seed=5)
        other = straight_vessel_spec(noise=0.01, seed=6)
        v1, _ = generate_volume(spec)
        v2, _ = generate_volume(other)
        assert not np.array_equal(v1.data, v2.data)

    def test_static_tissue_identical_across_repeats(self):
        spec = default_phantom_spec(
            dims=(6, 16, 48, 3), surface=SurfaceSpec(base_um=100.0),
            noise_floor=0.0, seed=7,
        )
        vol, _ = generate_volume(spec)
        np.testing.assert_array_equal(vol.data[:, :, 0, :], vol.data[:, :, 1, :])
        np.testing.assert_array_equal(vol.data[:, :, 0, :], vol.data[:, :, 2, :])

    def test_vessel_voxels_vary_across_repeats(self):
        spec = straight_vessel_spec()
        vol, gt = generate_volume(spec)
        diff = vol.data[:, :, 0, :] != vol.data[:, :, 1, :]
        assert np.array_equal(np.transpose(diff, (0, 1, 2)), gt.vessel_mask)

    def test_intensity_nonnegative_with_noise(self):
        spec = straight_vessel_spec(noise=0.05)
        vol, _ = generate_volume(spec)
        assert vol.data.min() >= 0.0
        assert vol.noise_floor == 0.05

    def test_attenuation_darkens_depth(self):
        spec = default_phantom_spec(
            dims=(6, 16, 64, 2),
            surface=SurfaceSpec(base_um=100.0),
            attenuation_per_mm=2.0,
            seed=8,
        )
        vol, _ = generate_volume(spec)
        mean_profile = vol.data.mean(axis=(0, 1, 2))
        assert mean_profile[10] > mean_profile[60]

    def test_measured_decorrelation_hits_target(self):
        # caliber matching the calibration protocol; thinner vessels read
        # lower because their boundary windows mix in static speckle
        spec = straight_vessel_spec(dims=(14, 48, 80, 3), radius=40.0, target_d=0.30)
        vol, gt = generate_volume(spec)
        d_slices = [recon.decorrelation(vol.frames(y))[0] for y in range(vol.dims[0])]
        d = np.stack(d_slices)  # (Y, X, Z)
        in_mask = d[gt.vessel_mask]
        out_mask = d[~gt.vessel_mask]
        assert abs(in_mask.mean() - 0.30) <= 0.05
        assert out_mask.mean() < 0.02

    def test_measured_decorrelation_low_target(self):
        spec = straight_vessel_spec(dims=(14, 48, 80, 3), radius=40.0, target_d=0.10)
        vol, gt = generate_volume(spec)
        d_slices = [recon.decorrelation(vol.frames(y))[0] for y in range(vol.dims[0])]
        d = np.stack(d_slices)
        assert abs(d[gt.vessel_mask].mean() - 0.10) <= 0.05


class TestGroundTruthMetrics:
    def test_straight_vessel_truth(self):
        spec = straight_vessel_spec(dims=(12, 32, 60, 3))
        _, gt = generate_volume(spec)
        tm = gt.true_metrics
        assert tm.VC == pytest.approx(40.0)
        assert tm.MDV == pytest.approx(300.0, abs=1e-9)
        assert tm.DVG == 0.0
        assert tm.ST == 0.0
        footprint = gt.vessel_mask.any(axis=2)
        assert tm.VD == pytest.approx(footprint.mean())
        assert 0.0 < tm.VD < 1.0

    def test_sloped_vessel_truth_dvg(self):
        spec = straight_vessel_spec(dims=(12, 32, 60, 3), depth=(250.0, 350.0))
        _, gt = generate_volume(spec)
        pv = gt.per_vessel[0]
        assert pv.depth_drop_um == pytest.approx(100.0)
        assert pv.path_length_um == pytest.approx(31 * 8.0)
        assert gt.true_metrics.DVG == pytest.approx(100.0 / (31 * 8.0))
        assert gt.true_metrics.MDV == pytest.approx(300.0, abs=10.0)

    def test_wave_surface_truth_st(self):
        a = 25.0
        spec = default_phantom_spec(
            dims=(8, 64, 96, 2),
            surface=SurfaceSpec(base_um=250.0, waves=((a, 0.0, 4.0, 0.0),)),
            seed=9,
        )
        _, gt = generate_volume(spec)
        assert gt.true_metrics.ST == pytest.approx(a / np.sqrt(2.0), rel=1e-9)

    def test_no_vessels_absent_metrics(self):
        spec = default_phantom_spec(dims=(6, 12, 48, 2), seed=10)
        _, gt = generate_volume(spec)
        assert gt.true_metrics.VD == 0.0
        assert gt.true_metrics.VC is None
        assert gt.true_metrics.MDV is None
        assert gt.true_metrics.DVG is None


class TestCohort:
    def template_pair(self):
        lesion = PhantomTemplate(
            dims=(10, 16, 64, 2), n_vessels=(3, 4), radius_um=(24.0, 30.0)
        )
        normal = PhantomTemplate(
            dims=(10, 16, 64, 2), n_vessels=(1, 2), radius_um=(12.0, 16.0)
        )
        return lesion, normal

    def test_record_counts_and_sides(self):
        pair = self.template_pair()
        ds = generate_cohort(
            CohortSpec(n_patients=5, rois_per_patient=4, archetypes=(pair, pair[::-1]), seed=1)
        )
        assert len(ds.records) == 5 * 4 * 2
        assert sum(r.side == "lesion" for r in ds.records) == 20
        assert len({r.record_id for r in ds.records}) == 40

    def test_round_robin_archetypes(self):
        pair = self.template_pair()
        ds = generate_cohort(
            CohortSpec(n_patients=7, rois_per_patient=4, archetypes=(pair, pair, pair), seed=2)
        )
        by_patient = {}
        for r in ds.records:
            by_patient.setdefault(r.patient_id, set()).add(r.archetype)
        assert all(len(v) == 1 for v in by_patient.values())
        seq = [by_patient[f"P{p:03d}"].pop() for p in range(7)]
        assert seq == [0, 1, 2, 0, 1, 2, 0]

    def test_manifest_deterministic(self):
        pair = self.template_pair()
        cs = CohortSpec(n_patients=3, rois_per_patient=5, archetypes=(pair, pair), seed=3)
        m1 = canonical_json(generate_cohort(cs).manifest())
        m2 = canonical_json(generate_cohort(cs).manifest())
        assert m1 == m2

    def test_seed_varies_layouts(self):
        pair = self.template_pair()
        a = generate_cohort(CohortSpec(3, 4, (pair, pair), seed=4))
        b = generate_cohort(CohortSpec(3, 4, (pair, pair), seed=5))
        assert canonical_json(a.manifest()) != canonical_json(b.manifest())

    def test_rois_within_same_patient_differ(self):
        pair = self.template_pair()
        ds = generate_cohort(CohortSpec(2, 4, (pair, pair), seed=6))
        lesions = [r for r in ds.records if r.patient_id == "P000" and r.side == "lesion"]
        specs = {canonical_json({"v": [list(map(list, v.centerline_um)) for v in r.spec.vessels]}) for r in lesions}
        assert len(specs) == len(lesions)

    def test_explicit_covariates_used(self):
        pair = self.template_pair()
        cov = ((0, 12.5), (1, 30.0))
        ds = generate_cohort(CohortSpec(2, 4, (pair, pair), covariates=cov, seed=7))
        for r in ds.records:
            idx = int(r.patient_id[1:])
            assert (r.gender, r.age) == cov[idx]

    def test_covariate_length_validated(self):
        pair = self.template_pair()
        with pytest.raises(PhantomSpecError):
            generate_cohort(CohortSpec(3, 4, (pair, pair), covariates=((0, 10.0),), seed=8))

    def test_roi_count_bounds(self):
        pair = self.template_pair()
        for bad in (3, 7):
            with pytest.raises(PhantomSpecError):
                CohortSpec(2, bad, (pair, pair), seed=9).validate()

    def test_needs_two_archetypes(self):
        pair = self.template_pair()
        with pytest.raises(PhantomSpecError):
            CohortSpec(2, 4, (pair,), seed=10).validate()

    def test_sampled_specs_generate(self):
        pair = self.template_pair()
        ds = generate_cohort(CohortSpec(1, 4, (pair, pair), seed=11))
        vol, gt = ds.realize(ds.records[0])
        assert vol.dims == (10, 16, 64, 2)
        assert len(gt.per_vessel) >= 1
