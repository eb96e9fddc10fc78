"""Disturbance operator tests: counting laws, identities, label partition."""

import numpy as np
import pytest

from gridfpd import data_io
from gridfpd.disturbances import (
    CATEGORIES,
    FIG2_GRIDS,
    KINDS,
    SOLAR_GRIDS,
    Disturbance,
    apply,
    contamination,
    error_accumulate,
    gaussian_noise,
    gaussian_smooth,
    missing_data,
    moment_matched_fabricate,
    nighttime_violation,
    period_offset,
    ramp_category,
    ramp_label,
    time_shift,
)
from gridfpd.hierarchy import Resolution


@pytest.fixture
def windows():
    rng = np.random.default_rng(0)
    return rng.uniform(0.5, 1.5, size=(8, 288))


class TestZeroLevelIdentity:
    def test_every_kind_bitwise_identity(self, windows):
        donor = windows[::-1].copy()
        outs = [
            gaussian_noise(windows, 0.0, seed=3),
            missing_data(windows, 0.0, seed=3),
            contamination(windows, donor, 0.0, seed=3),
            gaussian_smooth(windows, 0.0),
            error_accumulate(windows, 0.0, seed=3),
            time_shift(windows, 0),
            period_offset(windows, 0.0, resolution=Resolution.FIVE_MIN),
            nighttime_violation(windows, 0.0, seed=3,
                                resolution=Resolution.FIVE_MIN),
        ]
        for out in outs:
            assert np.array_equal(out, windows)
            assert out is not windows

    def test_zero_level_returns_copy_not_view(self, windows):
        out = gaussian_noise(windows, 0.0)
        out[0, 0] = -1.0
        assert windows[0, 0] != -1.0


class TestDeterminism:
    def test_same_seed_identical(self, windows):
        donor = windows[::-1].copy()
        for kind, grid in FIG2_GRIDS.items():
            alpha = grid[-1]
            d = Disturbance(kind, alpha, seed=11, auxiliary=donor)
            a = apply(windows, d)
            b = apply(windows, d)
            assert np.array_equal(a, b), kind

    def test_different_seeds_differ(self, windows):
        a = gaussian_noise(windows, 1.0, seed=0)
        b = gaussian_noise(windows, 1.0, seed=1)
        assert not np.array_equal(a, b)


class TestGaussianNoise:
    def test_variance_recovered(self):
        x = np.zeros((40, 288))
        out = gaussian_noise(x, 4.0, seed=5)
        assert out.size >= 10_000
        assert np.var(out - x) == pytest.approx(4.0, rel=0.1)

    def test_negative_alpha_rejected(self, windows):
        with pytest.raises(ValueError):
            gaussian_noise(windows, -0.1)


class TestMissingData:
    def test_floor_law_across_grid(self, windows):
        t = windows.shape[1]
        for alpha in (0.1, 0.25, 0.5, 0.73):
            out = missing_data(windows, alpha, seed=2)
            zeros = (out == 0.0).sum(axis=1)
            assert (zeros == int(np.floor(alpha * t))).all()

    def test_positions_vary_across_samples(self, windows):
        out = missing_data(windows, 0.25, seed=2)
        masks = out == 0.0
        assert not np.array_equal(masks[0], masks[1])

    def test_alpha_domain(self, windows):
        for bad in (-0.01, 1.01):
            with pytest.raises(ValueError):
                missing_data(windows, bad)


class TestContamination:
    def test_replacement_count(self, windows):
        donor = -np.ones_like(windows)
        for alpha in (0.25, 0.5, 0.75):
            out = contamination(windows, donor, alpha, seed=4)
            replaced = (out == -1.0).all(axis=1).sum()
            assert replaced == int(np.floor(alpha * windows.shape[0]))

    def test_alpha_one_draws_everything_from_donor(self, windows):
        rng = np.random.default_rng(6)
        donor = rng.uniform(5.0, 6.0, size=(20, windows.shape[1]))
        out = contamination(windows, donor, 1.0, seed=4)
        donor_rows = {row.tobytes() for row in donor}
        assert all(row.tobytes() in donor_rows for row in out)

    def test_point_level_count(self, windows):
        donor = -np.ones_like(windows)
        out = contamination(windows, donor, 0.25, seed=4, point_level=True)
        per_row = (out == -1.0).sum(axis=1)
        assert (per_row == int(np.floor(0.25 * windows.shape[1]))).all()

    def test_shape_mismatch(self, windows):
        with pytest.raises(ValueError):
            contamination(windows, windows[:, :100], 0.5)


class TestGaussianSmooth:
    def test_constant_series_unchanged(self):
        x = np.full((3, 100), 0.7)
        out = gaussian_smooth(x, 10.0)
        np.testing.assert_allclose(out, x, atol=1e-12)

    def test_impulse_recovers_kernel(self):
        sigma = 2.0
        radius = int(4.0 * sigma + 0.5)
        x = np.zeros((1, 64))
        x[0, 32] = 1.0
        out = gaussian_smooth(x, sigma)
        i = np.arange(-radius, radius + 1)
        kernel = np.exp(-(i * i) / (2 * sigma * sigma))
        kernel /= kernel.sum()
        np.testing.assert_allclose(
            out[0, 32 - radius:32 + radius + 1], kernel, atol=1e-12
        )
        assert out[0, : 32 - radius].max() == 0.0

    def test_negative_sigma_rejected(self, windows):
        with pytest.raises(ValueError):
            gaussian_smooth(windows, -1.0)


class TestErrorAccumulate:
    def test_first_point_unchanged(self, windows):
        out = error_accumulate(windows, 0.03, seed=7)
        np.testing.assert_array_equal(out[:, 0], windows[:, 0])

    def test_factors_replay_onto_any_input(self, windows):
        # the factor stream depends only on the seed and the shape, so the
        # walk extracted from a ones input must reproduce the disturbed copy
        ones = np.ones_like(windows)
        factors = error_accumulate(ones, 0.01, seed=9)
        out = error_accumulate(windows, 0.01, seed=9)
        np.testing.assert_allclose(out, windows * factors, rtol=1e-12)

    def test_log_walk_is_cumulative(self):
        ones = np.ones((2, 50))
        factors = error_accumulate(ones, 0.005, seed=1)
        eps = factors[:, 1:] / factors[:, :-1]
        np.testing.assert_allclose(
            np.log(factors[:, 1:]), np.cumsum(np.log(eps), axis=1), atol=1e-9
        )
        assert np.abs(eps - 1.0).max() < 0.05

    def test_negative_alpha_rejected(self, windows):
        with pytest.raises(ValueError):
            error_accumulate(windows, -0.005)


class TestTimeShift:
    def test_hand_case(self):
        out = time_shift(np.array([[1.0, 2.0, 3.0]]), 1)
        np.testing.assert_array_equal(out, [[3.0, 1.0, 2.0]])

    def test_composition_mod_t(self, windows):
        t = windows.shape[1]
        for a, b in ((40, 60), (100, 250), (287, 287)):
            left = time_shift(time_shift(windows, a), b)
            right = time_shift(windows, (a + b) % t)
            np.testing.assert_array_equal(left, right)

    def test_multiset_preserved(self, windows):
        out = time_shift(windows, 97)
        np.testing.assert_array_equal(
            np.sort(out, axis=1), np.sort(windows, axis=1)
        )

    def test_domain(self, windows):
        t = windows.shape[1]
        for bad in (t, t + 5, -1):
            with pytest.raises(ValueError):
                time_shift(windows, bad)
        with pytest.raises(ValueError):
            time_shift(windows, 1.5)


class TestPeriodOffset:
    def test_five_minute_conversion(self, windows):
        out = period_offset(windows, 2.0, resolution=Resolution.FIVE_MIN)
        np.testing.assert_array_equal(out, time_shift(windows, 24))

    def test_hourly_conversion(self):
        x = np.arange(24.0)[None, :]
        out = period_offset(x, 4.0, resolution=Resolution.HOURLY)
        np.testing.assert_array_equal(out, time_shift(x, 4))

    def test_batch_resolution_inferred(self):
        batch = data_io.synth_solar(2, seed=0)
        out = period_offset(batch, 2.0)
        np.testing.assert_array_equal(
            out.values, time_shift(batch.values, 24)
        )
        assert out.resolution is batch.resolution

    def test_fractional_interval_rejected(self):
        x = np.zeros((1, 24))
        with pytest.raises(ValueError):
            period_offset(x, 0.5, resolution=Resolution.HOURLY)

    def test_bare_array_needs_resolution(self, windows):
        with pytest.raises(ValueError):
            period_offset(windows, 2.0)


class TestNighttimeViolation:
    def test_exact_violated_point_count(self):
        batch = data_io.synth_solar(6, seed=3)
        out = nighttime_violation(batch, 2, seed=1)
        was_zero = batch.values == 0.0
        now_positive = out.values > 0.0
        per_day = (was_zero & now_positive).sum(axis=1)
        assert (per_day == 2 * 12).all()

    def test_injected_values_bounded_by_daytime_peak(self):
        batch = data_io.synth_solar(6, seed=3)
        out = nighttime_violation(batch, 3, seed=1)
        changed = out.values != batch.values
        for i in range(batch.n):
            peak = batch.values[i].max()
            assert out.values[i][changed[i]].max() <= peak
            assert out.values[i][changed[i]].min() >= 0.2 * peak - 1e-12

    def test_alpha_beyond_night_window(self):
        batch = data_io.synth_solar(1, seed=0)
        with pytest.raises(ValueError):
            nighttime_violation(batch, 8, seed=0)

    def test_partial_day_rejected(self):
        x = np.ones((1, 100))
        with pytest.raises(ValueError):
            nighttime_violation(x, 2, resolution=Resolution.FIVE_MIN)


class TestMomentMatchedFabricate:
    def test_moments_match(self):
        rng = np.random.default_rng(8)
        x = rng.multivariate_normal(np.arange(6.0), np.eye(6), size=4000)
        fab = moment_matched_fabricate(x, seed=2)
        assert fab.shape == x.shape
        np.testing.assert_allclose(fab.mean(axis=0), x.mean(axis=0), atol=0.1)
        np.testing.assert_allclose(
            np.cov(fab.T, bias=True), np.cov(x.T, bias=True), atol=0.15
        )

    def test_same_seed_identical(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(30, 8))
        a = moment_matched_fabricate(x, seed=5)
        b = moment_matched_fabricate(x, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            moment_matched_fabricate(np.ones((8, 8)))

    def test_degenerate_covariance_warns(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(50, 4))
        x[:, 0] = 1.0
        with pytest.warns(RuntimeWarning, match="ridge"):
            moment_matched_fabricate(x, seed=0)


class TestRampLabels:
    def test_paper_examples(self):
        up = ramp_label(np.array([0.0, 0.1, 0.2, 0.3, 0.5, 0.6]), 1.0, 1)
        assert up.category == "strong_up"
        flat = np.full(6, 0.4)
        assert ramp_label(flat, 1.0, 1).category == "neutral"
        assert ramp_label(flat, 1.0, 2).category == "neutral"
        down = np.array([0.5, 0.4, 0.4, 0.3, 0.3, 0.25])
        assert ramp_label(down, 1.0, 2).category == "moderate_down"

    def test_boundary_membership(self):
        cases_s1 = {
            -0.50: "moderate_down",
            -0.33: "mild_down",
            -0.25: "neutral",
            0.25: "neutral",
            0.33: "mild_up",
            0.50: "moderate_up",
        }
        for rate, want in cases_s1.items():
            idx = int(ramp_category(rate, 1))
            assert CATEGORIES[idx] == want, rate

    def test_partition_exactly_one_category(self):
        rng = np.random.default_rng(11)
        rates = np.concatenate([
            rng.uniform(-1.2, 1.2, size=500_000),
            [-0.5, -0.33, -0.3, -0.25, -0.2, -0.1, 0.0,
             0.1, 0.2, 0.25, 0.3, 0.33, 0.5],
        ])
        for scenario in (1, 2):
            idx = ramp_category(rates, scenario)
            assert idx.min() >= 0 and idx.max() <= 6

    def test_scaling_by_p_max(self):
        w = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 30.0])
        assert ramp_label(w, 100.0, 1).category == "mild_up"
        assert ramp_label(w, 100.0, 2).category == "moderate_up"
        assert ramp_label(w, 50.0, 1).category == "strong_up"

    def test_preconditions(self):
        with pytest.raises(ValueError):
            ramp_label(np.zeros(5), 1.0, 1)
        with pytest.raises(ValueError):
            ramp_label(np.zeros(6), 0.0, 1)
        with pytest.raises(ValueError):
            ramp_category(0.0, 3)


class TestApplyDispatch:
    def test_grids_cover_six_kinds(self):
        assert set(FIG2_GRIDS) == set(KINDS[:6])
        assert set(SOLAR_GRIDS) == {"period_offset", "nighttime_violation"}
        for grid in FIG2_GRIDS.values():
            assert grid[0] == 0.0
            assert list(grid) == sorted(grid)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Disturbance("typo", 0.1)

    def test_contamination_requires_auxiliary(self, windows):
        with pytest.raises(ValueError, match="donor"):
            apply(windows, Disturbance("contamination", 0.5))

    def test_batch_metadata_preserved(self):
        batch = data_io.synth_solar(2, seed=1)
        out = apply(batch, Disturbance("gaussian_noise", 0.16, seed=0))
        assert out.resolution is batch.resolution
        assert out.label == batch.label
        assert out.night_window == batch.night_window

    def test_solar_checks_through_dispatcher(self):
        batch = data_io.synth_solar(3, seed=2)
        shifted = apply(batch, Disturbance("period_offset", 2.0))
        assert not np.array_equal(shifted.values, batch.values)
        violated = apply(batch, Disturbance("nighttime_violation", 2.0, seed=1))
        assert (violated.values != batch.values).any()
