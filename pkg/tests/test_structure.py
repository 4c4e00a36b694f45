"""Tests for surface detection, flattening, and en-face projection."""

import itertools

import numpy as np
import pytest

from octapws import structure
from octapws.structure import EDGE_EPS, detect_surface, flatten, mvp, unflatten


def reference_gradient(values):
    """Backward vertical difference against an implicit zero row above,
    clipped to >= 0, max-normalized."""
    values = np.asarray(values, dtype=np.float64)
    g = np.zeros_like(values)
    for x in range(values.shape[0]):
        for z in range(values.shape[1]):
            above = values[x, z - 1] if z > 0 else 0.0
            g[x, z] = max(0.0, values[x, z] - above)
    m = g.max()
    return g / m if m > 0 else g


def enumerate_min_path(values, jump_limit):
    """Exhaustive minimum-cost left-to-right path by brute enumeration.

    Every jump-constrained path is visited, generated as a start row plus
    one step in [-jump_limit, jump_limit] per column transition.
    """
    g = reference_gradient(values)
    nx, nz = g.shape
    steps = range(-jump_limit, jump_limit + 1)
    best_cost, best_path = np.inf, None
    for start in range(nz):
        for jumps in itertools.product(steps, repeat=nx - 1):
            path = [start]
            for j in jumps:
                path.append(path[-1] + j)
            if min(path) < 0 or max(path) >= nz:
                continue
            cost = sum(
                2.0 - (g[c, path[c]] + g[c + 1, path[c + 1]]) + EDGE_EPS
                for c in range(nx - 1)
            )
            if cost < best_cost:
                best_cost, best_path = cost, list(path)
    return np.array(best_path), best_cost


class TestDetectSurface:
    def test_step_edge_found_exactly(self):
        values = np.zeros((32, 64))
        values[:, 40:] = 1.0
        path = detect_surface(values)
        assert path.found
        np.testing.assert_array_equal(path.rows, 40)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(0)
        for trial in range(8):
            values = rng.uniform(size=(6, 7))
            path = detect_surface(values, jump_limit=2, smooth_sigma=(0.0, 0.0))
            ref_rows, ref_cost = enumerate_min_path(values, jump_limit=2)
            assert path.found
            np.testing.assert_allclose(path.cost, ref_cost, atol=1e-9)
            np.testing.assert_array_equal(path.rows, ref_rows)

    def test_isolated_spike_unreachable(self):
        # strong gradient at row 10 in one column only: with jump_limit 2 a
        # 6-column path cannot detour there and back from row 40
        values = np.zeros((6, 64))
        values[:, 40:] = 1.0
        values[3, 10] = 1.0
        values[3, 11:40] = 0.0
        path = detect_surface(values, jump_limit=2, smooth_sigma=(0.0, 0.0))
        np.testing.assert_array_equal(path.rows, 40)
        ref_rows, _ = enumerate_min_path(values, jump_limit=2)
        np.testing.assert_array_equal(ref_rows, 40)

    def test_tilted_boundary_tracked_within_one_px(self):
        values = np.zeros((40, 64))
        for x in range(40):
            values[x, int(30 + 0.5 * x) - 9 :] = 1.0
        true_rows = np.array([int(30 + 0.5 * x) - 9 for x in range(40)])
        path = detect_surface(values)
        assert np.abs(path.rows - true_rows).max() <= 1

    def test_jump_limit_respected(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(size=(24, 30))
        for jl in (1, 2, 3):
            path = detect_surface(values, jump_limit=jl)
            assert np.abs(np.diff(path.rows)).max() <= jl

    def test_all_zero_gradient_signals_no_surface(self):
        path = detect_surface(np.zeros((8, 12)))
        assert not path.found

    def test_bright_from_top_row_found_at_zero(self):
        # flattened slices start bright at row 0; the implicit zero row
        # above makes that a detectable transition
        values = np.tile(np.linspace(0.9, 0.2, 20), (8, 1))
        path = detect_surface(values)
        assert path.found
        np.testing.assert_array_equal(path.rows, 0)

    def test_noisy_boundary_still_within_one_px(self):
        rng = np.random.default_rng(2)
        values = np.zeros((48, 80))
        for x in range(48):
            values[x, 35 + (x % 3) :] = 1.0
        values += rng.normal(0.0, 0.05, size=values.shape)
        path = detect_surface(np.clip(values, 0.0, 1.0))
        true_rows = np.array([35 + (x % 3) for x in range(48)])
        assert np.abs(path.rows - true_rows).max() <= 1


class TestFlatten:
    def test_constant_surface_is_pure_shift(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(size=(10, 20))
        rows = np.full(10, 5)
        flat = flatten(values, rows)
        np.testing.assert_array_equal(flat[:, :15], values[:, 5:])
        np.testing.assert_array_equal(flat[:, 15:], 0.0)

    def test_round_trip_restores_retained_rows(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(size=(12, 25))
        rows = rng.integers(0, 8, size=12)
        flat = flatten(values, rows)
        back = unflatten(flat, rows)
        for x in range(12):
            np.testing.assert_array_equal(back[x, rows[x] :], values[x, rows[x] :])
            np.testing.assert_array_equal(back[x, : rows[x]], 0.0)

    def test_column_multiset_preserved(self):
        rng = np.random.default_rng(5)
        values = rng.uniform(size=(9, 16))
        rows = rng.integers(0, 5, size=9)
        flat = flatten(values, rows)
        for x in range(9):
            kept = values[x, rows[x] :]
            np.testing.assert_array_equal(np.sort(flat[x, : kept.size]), np.sort(kept))

    def test_detected_tilted_surface_flattens_below_one_px_std(self):
        values = np.zeros((40, 64))
        for x in range(40):
            values[x, int(30 + 0.5 * x) - 9 :] = 1.0
        path = detect_surface(values)
        flat = flatten(values, path.rows)
        repath = detect_surface(flat)
        assert repath.found
        assert repath.rows.std() < 1.0

    def test_out_of_range_rows_rejected(self):
        with pytest.raises(ValueError):
            flatten(np.zeros((4, 6)), np.array([0, 1, 6, 0]))


class TestMvp:
    def test_single_hot_voxel(self):
        vol = np.zeros((4, 5, 120))
        vol[2, 3, 30] = 0.8  # axial pitch 10 um -> 300 um
        out = mvp(vol, slab_um=(0.0, 1000.0), axial_pitch_um=10.0)
        assert out.value[2, 3] == 0.8
        assert out.depth_um[2, 3] == 300.0

    def test_tie_prefers_shallowest(self):
        vol = np.zeros((1, 1, 120))
        vol[0, 0, 20] = 0.6
        vol[0, 0, 40] = 0.6
        out = mvp(vol, slab_um=(0.0, 1000.0), axial_pitch_um=10.0)
        assert out.depth_um[0, 0] == 200.0

    def test_zero_column_reports_slab_top(self):
        vol = np.zeros((2, 2, 50))
        out = mvp(vol, slab_um=(100.0, 400.0), axial_pitch_um=10.0)
        np.testing.assert_array_equal(out.value, 0.0)
        np.testing.assert_array_equal(out.depth_um, 100.0)

    def test_slab_bounds_respected(self):
        vol = np.zeros((1, 1, 100))
        vol[0, 0, 5] = 1.0  # 50 um, above the slab top
        vol[0, 0, 35] = 0.5
        out = mvp(vol, slab_um=(100.0, 600.0), axial_pitch_um=10.0)
        assert out.value[0, 0] == 0.5
        assert out.depth_um[0, 0] == 350.0

    def test_monotone_under_slab_widening(self):
        rng = np.random.default_rng(6)
        vol = rng.uniform(size=(6, 7, 80))
        narrow = mvp(vol, slab_um=(100.0, 400.0), axial_pitch_um=10.0)
        wide = mvp(vol, slab_um=(50.0, 700.0), axial_pitch_um=10.0)
        assert np.all(wide.value >= narrow.value)

    def test_empty_slab_rejected(self):
        vol = np.zeros((2, 2, 50))
        with pytest.raises(ValueError):
            mvp(vol, slab_um=(400.0, 400.0), axial_pitch_um=10.0)
        with pytest.raises(ValueError):
            mvp(vol, slab_um=(600.0, 500.0), axial_pitch_um=10.0)

    def test_depth_within_slab_where_value_positive(self):
        rng = np.random.default_rng(7)
        vol = rng.uniform(size=(5, 5, 60))
        out = mvp(vol, slab_um=(80.0, 420.0), axial_pitch_um=10.0)
        pos = out.value > 0
        assert np.all(out.depth_um[pos] >= 80.0)
        assert np.all(out.depth_um[pos] <= 420.0)


class TestSurfaceMapType:
    def test_height_bounds_validated(self):
        with pytest.raises(ValueError):
            structure.SurfaceMap(
                height_um=np.array([[-5.0, 10.0]]),
                valid=np.array([True]),
            )
        ok = structure.SurfaceMap(
            height_um=np.array([[-5.0, 10.0]]),
            valid=np.array([False]),
        )
        assert ok.n_invalid == 1
