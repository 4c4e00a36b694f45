"""Tests for inter-frame registration, decorrelation, and flow classification."""

import numpy as np
import pytest

from octapws import recon


def brute_force_decorrelation(frames, kernel=(3, 3)):
    """Reference decorrelation: explicit python loops over window sums.

    Windows are clamped at the borders (nearest-style averaging domain).
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    nx, nz = frames[0].shape
    hy, hz = kernel[0] // 2, kernel[1] // 2
    out = np.zeros((nx, nz))
    flagged = np.zeros((nx, nz), dtype=bool)
    for x in range(nx):
        for z in range(nz):
            xs = slice(max(0, x - hy), min(nx, x + hy + 1))
            zs = slice(max(0, z - hz), min(nz, z + hz + 1))
            corrs = []
            for a, b in zip(frames[:-1], frames[1:]):
                wa, wb = a[xs, zs], b[xs, zs]
                num = float(np.sum(wa * wb))
                den = float(np.sqrt(np.sum(wa * wa) * np.sum(wb * wb)))
                if den == 0.0:
                    corrs.append(1.0)
                    flagged[x, z] = True
                else:
                    corrs.append(num / den)
            if flagged[x, z]:
                out[x, z] = 0.0
            else:
                out[x, z] = min(1.0, max(0.0, 1.0 - float(np.mean(corrs))))
    return out, flagged


class TestRegistration:
    def test_known_shift_recovered_exactly(self):
        rng = np.random.default_rng(0)
        base = rng.uniform(0.2, 1.0, size=(48, 64))
        # shifted[x, z] = base[x - 3, z + 2], so the recovered correction
        # that re-aligns it must be (-3, +2)
        shifted = np.roll(np.roll(base, 3, axis=0), -2, axis=1)
        result = recon.register_frames([base, shifted], search=5)
        assert result.shifts[1] == (-3, 2)
        assert result.shifts[0] == (0, 0)
        np.testing.assert_allclose(result.frames[1][4:-4, 4:-4], base[4:-4, 4:-4], atol=1e-12)

    def test_identical_frames_zero_shift(self):
        rng = np.random.default_rng(1)
        f = rng.uniform(size=(20, 30))
        result = recon.register_frames([f, f, f])
        assert all(s == (0, 0) for s in result.shifts)
        assert not result.any_unregistrable

    def test_zero_shift_preferred_on_flat_correlation(self):
        # constant-gradient image correlates equally at many shifts; the
        # least-motion tie rule must pick (0, 0)
        f = np.tile(np.linspace(0.0, 1.0, 40), (30, 1))
        result = recon.register_frames([f, f.copy()], search=3)
        assert result.shifts[1] == (0, 0)

    def test_pure_noise_flagged_unregistrable(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(40, 40))
        b = rng.normal(size=(40, 40))
        result = recon.register_frames([a, b], search=4)
        assert result.flags[1]
        assert result.any_unregistrable
        np.testing.assert_array_equal(result.frames[1], b)

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            recon.register_frames([np.zeros((4, 4))])


class TestDecorrelation:
    def test_identical_frames_give_zero(self):
        rng = np.random.default_rng(3)
        f = rng.uniform(0.1, 1.0, size=(24, 32))
        d, flagged = recon.decorrelation([f, f.copy(), f.copy()])
        np.testing.assert_allclose(d, 0.0, atol=1e-12)
        assert not flagged.any()

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        frames = [rng.uniform(0.05, 1.0, size=(14, 17)) for _ in range(3)]
        d, flagged = recon.decorrelation(frames)
        d_ref, flagged_ref = brute_force_decorrelation(frames)
        np.testing.assert_allclose(d, d_ref, atol=1e-10)
        np.testing.assert_array_equal(flagged, flagged_ref)

    def test_matches_brute_force_with_zeros(self):
        rng = np.random.default_rng(5)
        frames = [rng.uniform(0.05, 1.0, size=(12, 12)) for _ in range(4)]
        for f in frames:
            f[:6, :6] = 0.0
        d, flagged = recon.decorrelation(frames)
        d_ref, flagged_ref = brute_force_decorrelation(frames)
        np.testing.assert_allclose(d, d_ref, atol=1e-10)
        np.testing.assert_array_equal(flagged, flagged_ref)
        assert flagged.any()

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        frames = [rng.uniform(0.05, 1.0, size=(16, 20)) for _ in range(3)]
        d1, _ = recon.decorrelation(frames)
        d2, _ = recon.decorrelation([f * 250.0 for f in frames])
        np.testing.assert_allclose(d1, d2, atol=1e-12)

    def test_range_clamped(self):
        rng = np.random.default_rng(7)
        frames = [rng.normal(size=(20, 20)) for _ in range(3)]
        d, _ = recon.decorrelation(frames)
        assert d.min() >= 0.0
        assert d.max() <= 1.0

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            recon.decorrelation([np.ones((8, 8))] * 2, kernel=(2, 3))


class TestStructural:
    def test_output_normalized_to_unit_range(self):
        rng = np.random.default_rng(8)
        frames = [rng.uniform(0.0, 3.0, size=(16, 16)) for _ in range(3)]
        s = recon.structural_slice(frames)
        assert s.values.min() == 0.0
        assert s.values.max() == 1.0
        assert not s.degenerate

    def test_constant_input_degenerate(self):
        s = recon.structural_slice([np.full((8, 8), 0.7)] * 2)
        assert s.degenerate
        np.testing.assert_array_equal(s.values, 0.0)

    def test_log_compression_monotone(self):
        frames = [np.linspace(0.0, 1.0, 32).reshape(1, 32)] * 2
        s = recon.structural_slice(frames)
        assert np.all(np.diff(s.values[0]) > 0)
        # log compression lifts mid-tones above the linear ramp
        assert s.values[0, 16] > frames[0][0, 16]


class TestClassifyFlow:
    def test_threshold_line(self):
        floor = 0.1
        intensity = np.full((1, 4), 0.8)
        isnr = floor / 0.8
        d = np.array([[isnr + 0.049, isnr + 0.051, isnr + 0.051, 1.0]])
        intensity[0, 3] = 0.2  # below 3 * floor
        mask = recon.classify_flow(d, intensity, noise_floor=floor)
        assert mask.tolist() == [[False, True, True, False]]

    def test_dark_pixels_never_flow(self):
        rng = np.random.default_rng(9)
        d = rng.uniform(0.5, 1.0, size=(10, 10))
        intensity = np.full((10, 10), 0.01)
        mask = recon.classify_flow(d, intensity, noise_floor=0.1)
        assert not mask.any()

    def test_floor_must_be_positive(self):
        with pytest.raises(ValueError):
            recon.classify_flow(np.zeros((2, 2)), np.ones((2, 2)), noise_floor=0.0)
