"""Distribution metric tests against closed forms and brute-force oracles."""

import json

import numpy as np
import pytest
import scipy.linalg

from gridfpd.linalg import LinalgError
from gridfpd.metrics import (
    METRIC_KEYS,
    GaussianEmbedding,
    MetricReport,
    crps,
    crps_batch,
    energy_score,
    evaluate_pair,
    fit_gaussian,
    fpd,
    js_gaussian,
    kl_gaussian,
    mape_paired,
    median_pairwise_distance,
    mmd,
    raw_frechet,
)

from test_linalg import random_spd


def random_embedding(rng, dim, scale=1.0):
    return GaussianEmbedding(
        rng.normal(size=dim) * scale, random_spd(rng, dim), count=dim + 2
    )


# ---------------------------------------------------------------- oracles


def fpd_sqrtm_oracle(g1, g2):
    """Independent path: dense matrix square root of the covariance product."""
    dm = g1.mean - g2.mean
    cross = scipy.linalg.sqrtm(g1.cov @ g2.cov)
    return float(dm @ dm + np.trace(g1.cov + g2.cov - 2 * np.real(cross)))


def kl_manual_oracle(g1, g2):
    s2inv = np.linalg.inv(g2.cov)
    dm = g2.mean - g1.mean
    return 0.5 * (
        np.trace(s2inv @ g1.cov)
        + dm @ s2inv @ dm
        - g1.dim
        + np.log(np.linalg.det(g2.cov) / np.linalg.det(g1.cov))
    )


def mmd_brute(z1, z2, kern, include_mean_term=True):
    n = z1.shape[0]
    s11 = sum(kern(z1[i], z1[j]) for i in range(n) for j in range(n))
    s22 = sum(kern(z2[i], z2[j]) for i in range(n) for j in range(n))
    s12 = sum(kern(z1[i], z2[j]) for i in range(n) for j in range(n))
    total = (s11 + s22 - 2.0 * s12) / (n * n)
    if include_mean_term:
        dm = z1.mean(axis=0) - z2.mean(axis=0)
        total += dm @ dm
    return total


def crps_brute(ens, obs):
    ens = np.atleast_2d(np.asarray(ens, float).T).T
    m, t = ens.shape
    total = 0.0
    for k in range(t):
        e1 = sum(abs(ens[i, k] - obs[k]) for i in range(m)) / m
        e2 = sum(
            abs(ens[i, k] - ens[j, k]) for i in range(m) for j in range(m)
        ) / (m * m)
        total += e1 - 0.5 * e2
    return total / t


def energy_brute(z1, z2):
    n1, n2 = z1.shape[0], z2.shape[0]
    cross = sum(
        np.linalg.norm(z1[i] - z2[j]) for i in range(n1) for j in range(n2)
    ) / (n1 * n2)
    s1 = sum(
        np.linalg.norm(z1[i] - z1[j]) for i in range(n1) for j in range(n1)
    ) / (n1 * n1)
    s2 = sum(
        np.linalg.norm(z2[i] - z2[j]) for i in range(n2) for j in range(n2)
    ) / (n2 * n2)
    return cross - 0.5 * s1 - 0.5 * s2


# ----------------------------------------------------------- fit_gaussian


class TestFitGaussian:
    def test_two_rows(self):
        g = fit_gaussian(np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_allclose(g.mean, [1.0, 0.0])
        np.testing.assert_allclose(g.cov, [[1.0, 0.0], [0.0, 0.0]])
        assert g.count == 2

    def test_identical_rows_zero_cov(self):
        z = np.tile([3.0, -1.0, 2.0], (5, 1))
        g = fit_gaussian(z)
        np.testing.assert_allclose(g.cov, np.zeros((3, 3)))

    def test_large_sample_recovers_moments(self):
        rng = np.random.default_rng(0)
        mean = np.array([1.0, -2.0, 0.5])
        cov = random_spd(rng, 3)
        z = rng.multivariate_normal(mean, cov, size=200_000)
        g = fit_gaussian(z)
        np.testing.assert_allclose(g.mean, mean, atol=2e-2)
        np.testing.assert_allclose(g.cov, cov, rtol=2e-2, atol=5e-2)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            fit_gaussian(np.ones((1, 4)))

    def test_embedding_shape_validation(self):
        with pytest.raises(ValueError):
            GaussianEmbedding(np.ones(3), np.eye(2))


# -------------------------------------------------------------------- fpd


class TestFpd:
    def test_identical_embedding_zero(self):
        rng = np.random.default_rng(1)
        g = random_embedding(rng, 6)
        assert fpd(g, g) <= 1e-6

    def test_one_dim_closed_form_grid(self):
        for m1 in (-2.0, 0.0, 1.5):
            for m2 in (-1.0, 0.25, 3.0):
                for s1 in (0.1, 1.0, 4.0):
                    for s2 in (0.5, 2.0):
                        g1 = GaussianEmbedding([m1], [[s1 * s1]])
                        g2 = GaussianEmbedding([m2], [[s2 * s2]])
                        expect = (m1 - m2) ** 2 + (s1 - s2) ** 2
                        assert fpd(g1, g2) == pytest.approx(expect, rel=1e-10)

    def test_matches_dense_sqrtm_path(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            g1 = random_embedding(rng, 8)
            g2 = random_embedding(rng, 8)
            assert fpd(g1, g2) == pytest.approx(
                fpd_sqrtm_oracle(g1, g2), rel=1e-8, abs=1e-10
            )

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            d = int(rng.integers(1, 17))
            g1 = random_embedding(rng, d)
            g2 = random_embedding(rng, d)
            a, b = fpd(g1, g2), fpd(g2, g1)
            assert a >= 0.0
            assert abs(a - b) <= 1e-8 * max(a, b, 1.0)

    def test_dim_mismatch(self):
        g1 = GaussianEmbedding(np.zeros(2), np.eye(2))
        g2 = GaussianEmbedding(np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            fpd(g1, g2)


# ----------------------------------------------------------------- kl, js


class TestKlJs:
    def test_self_kl_zero(self):
        rng = np.random.default_rng(4)
        g = random_embedding(rng, 5)
        assert kl_gaussian(g, g) == pytest.approx(0.0, abs=1e-9)

    def test_one_dim_half(self):
        g1 = GaussianEmbedding([0.0], [[1.0]])
        g2 = GaussianEmbedding([1.0], [[1.0]])
        assert kl_gaussian(g1, g2) == pytest.approx(0.5, rel=1e-12)

    def test_matches_manual_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            d = int(rng.integers(1, 9))
            g1 = random_embedding(rng, d)
            g2 = random_embedding(rng, d)
            val = kl_gaussian(g1, g2)
            assert val >= 0.0
            assert val == pytest.approx(kl_manual_oracle(g1, g2), rel=1e-8)

    def test_singular_second_cov_ridged_with_warning(self):
        g1 = GaussianEmbedding([0.0, 0.0], np.eye(2))
        g2 = GaussianEmbedding([0.0, 0.0], np.diag([1.0, 0.0]))
        with pytest.warns(RuntimeWarning):
            val = kl_gaussian(g1, g2)
        assert np.isfinite(val)

    def test_zero_cov_beyond_regularization(self):
        g1 = GaussianEmbedding([0.0], [[1.0]])
        g2 = GaussianEmbedding([0.0], [[0.0]])
        with pytest.raises(LinalgError):
            kl_gaussian(g1, g2)

    def test_js_self_zero_and_exact_symmetry(self):
        rng = np.random.default_rng(6)
        g1 = random_embedding(rng, 4)
        g2 = random_embedding(rng, 4)
        assert js_gaussian(g1, g1) == pytest.approx(0.0, abs=1e-9)
        assert js_gaussian(g1, g2) == js_gaussian(g2, g1)
        assert js_gaussian(g1, g2) >= 0.0

    def test_js_one_dim_through_two_kls(self):
        g1 = GaussianEmbedding([0.0], [[1.0]])
        g2 = GaussianEmbedding([2.0], [[4.0]])
        mid = GaussianEmbedding([1.0], [[2.5]])
        expect = 0.5 * kl_manual_oracle(g1, mid) + 0.5 * kl_manual_oracle(g2, mid)
        assert js_gaussian(g1, g2) == pytest.approx(expect, rel=1e-10)


# -------------------------------------------------------------------- mmd


class TestMmd:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(6, 3))
        assert mmd(z, z.copy(), kernel="rbf") == 0.0
        assert mmd(z, z.copy(), kernel="linear") == 0.0

    def test_wide_bandwidth_limit_is_mean_gap(self):
        rng = np.random.default_rng(8)
        z1 = rng.normal(size=(8, 2))
        z2 = rng.normal(size=(8, 2)) + 3.0
        dm = z1.mean(axis=0) - z2.mean(axis=0)
        val = mmd(z1, z2, kernel="rbf", bandwidth=1e8)
        assert val == pytest.approx(float(dm @ dm), rel=1e-6)

    def test_brute_force_rbf(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            z1 = rng.normal(size=(4, 3))
            z2 = rng.normal(size=(4, 3)) + rng.normal()
            bw = 1.3

            def kern(a, b, bw=bw):
                d = a - b
                return np.exp(-(d @ d) / (2 * bw * bw))

            for flag in (True, False):
                assert mmd(
                    z1, z2, kernel="rbf", bandwidth=bw, include_mean_term=flag
                ) == pytest.approx(mmd_brute(z1, z2, kern, flag), abs=1e-12)

    def test_brute_force_linear(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            z1 = rng.normal(size=(5, 2))
            z2 = rng.normal(size=(5, 2)) * 2.0
            assert mmd(z1, z2, kernel="linear") == pytest.approx(
                mmd_brute(z1, z2, np.dot), abs=1e-12
            )

    def test_linear_kernel_doubles_mean_gap(self):
        # the diagonal-inclusive linear double sums collapse to the squared
        # mean gap, so keeping the mean term doubles the kernel-only value
        rng = np.random.default_rng(11)
        z1 = rng.normal(size=(7, 4))
        z2 = rng.normal(size=(7, 4)) + 1.0
        kernel_only = mmd(z1, z2, kernel="linear", include_mean_term=False)
        assert mmd(z1, z2, kernel="linear") == pytest.approx(
            2.0 * kernel_only, rel=1e-9
        )

    def test_unequal_sizes_rejected_with_guidance(self):
        rng = np.random.default_rng(12)
        with pytest.raises(ValueError, match="subsample"):
            mmd(rng.normal(size=(4, 2)), rng.normal(size=(5, 2)))

    def test_default_bandwidth_is_median_heuristic(self):
        rng = np.random.default_rng(13)
        z1 = rng.normal(size=(4, 2))
        z2 = rng.normal(size=(4, 2))
        bw = median_pairwise_distance(z1, z2)
        assert mmd(z1, z2, kernel="rbf") == pytest.approx(
            mmd(z1, z2, kernel="rbf", bandwidth=bw), abs=0.0
        )

    def test_median_distance_degenerate_fallback(self):
        z = np.ones((4, 2))
        assert median_pairwise_distance(z, z) == 1.0

    def test_median_distance_hand_case(self):
        z = np.array([[0.0], [1.0], [3.0]])
        # pair distances 1, 3, 2 -> median 2
        assert median_pairwise_distance(z) == pytest.approx(2.0)


# ------------------------------------------------------------------- crps


class TestCrps:
    def test_degenerate_ensemble_zero(self):
        obs = np.array([1.0, 2.0, 3.0])
        ens = np.tile(obs, (4, 1))
        assert crps(ens, obs) == 0.0

    def test_two_member_hand_case(self):
        assert crps(np.array([0.0, 2.0]), 1.0) == pytest.approx(0.5)

    def test_brute_force(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            m = int(rng.integers(2, 17))
            t = int(rng.integers(1, 6))
            ens = rng.normal(size=(m, t))
            obs = rng.normal(size=t)
            assert crps(ens, obs) == pytest.approx(
                crps_brute(ens, obs), abs=1e-12
            )

    def test_too_small_ensemble(self):
        with pytest.raises(ValueError):
            crps(np.array([[1.0, 2.0]]), np.array([1.0, 2.0]))

    def test_batch_matches_loop(self):
        rng = np.random.default_rng(15)
        ens = rng.normal(size=(9, 5))
        obs = rng.normal(size=(7, 5))
        loop = np.mean([crps(ens, row) for row in obs])
        assert crps_batch(ens, obs) == pytest.approx(loop, abs=1e-12)

    def test_batch_length_mismatch(self):
        with pytest.raises(ValueError):
            crps_batch(np.zeros((3, 4)), np.zeros((3, 5)))


# ----------------------------------------------------------- energy score


class TestEnergyScore:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(16)
        z = rng.normal(size=(5, 3))
        assert energy_score(z, z.copy()) == 0.0

    def test_point_masses(self):
        z1 = np.zeros((3, 2))
        z2 = np.full((3, 2), 0.0)
        z2[:, 0] = 5.0
        assert energy_score(z1, z2) == pytest.approx(5.0)

    def test_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            z1 = rng.normal(size=(int(rng.integers(2, 13)), 3))
            z2 = rng.normal(size=(int(rng.integers(2, 13)), 3))
            assert energy_score(z1, z2) == pytest.approx(
                energy_brute(z1, z2), abs=1e-12
            )

    def test_small_sets_rejected(self):
        with pytest.raises(ValueError):
            energy_score(np.zeros((1, 2)), np.zeros((4, 2)))


# ------------------------------------------------------------------- mape


class TestMapePaired:
    def test_identical_index_pairing_zero(self):
        rng = np.random.default_rng(18)
        x = rng.uniform(1.0, 2.0, size=(6, 10))
        res = mape_paired(x, x.copy())
        assert res.value == 0.0
        assert res.excluded == 0
        assert res.used == 60

    def test_constant_offset(self):
        x1 = np.full((4, 5), 100.0)
        x2 = np.full((4, 5), 110.0)
        assert mape_paired(x1, x2).value == pytest.approx(0.10)

    def test_random_pairing_seed_sensitivity(self):
        rng = np.random.default_rng(19)
        x1 = rng.uniform(1.0, 2.0, size=(20, 6))
        x2 = rng.uniform(1.0, 2.0, size=(20, 6))
        a = mape_paired(x1, x2, pairing="random", seed=0).value
        b = mape_paired(x1, x2, pairing="random", seed=1).value
        assert a != b
        again = mape_paired(x1, x2, pairing="random", seed=0).value
        assert a == again

    def test_zero_denominators_excluded_and_counted(self):
        x1 = np.array([[0.0, 2.0, 4.0]])
        x2 = np.array([[1.0, 1.0, 2.0]])
        res = mape_paired(x1, x2)
        assert res.excluded == 1
        assert res.used == 2
        assert res.value == pytest.approx(0.5)

    def test_all_excluded_raises(self):
        with pytest.raises(ValueError):
            mape_paired(np.zeros((2, 3)), np.ones((2, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mape_paired(np.ones((2, 3)), np.ones((3, 3)))


# ------------------------------------------------------------ raw frechet


class TestRawFrechet:
    def test_identical_zero(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(40, 12))
        assert raw_frechet(x, x.copy()) == 0.0

    def test_mean_shift_lower_bound(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(50, 12))
        c = 0.7
        val = raw_frechet(x, x + c)
        assert val >= 12 * c * c - 1e-9

    def test_window_length_mismatch(self):
        with pytest.raises(ValueError):
            raw_frechet(np.zeros((4, 5)), np.zeros((4, 6)))


# ---------------------------------------------------------- MetricReport


class TestMetricReport:
    def test_json_round_trip(self):
        values = {k: float(i) for i, k in enumerate(METRIC_KEYS)}
        rep = MetricReport(
            values=values, config_hash="abc", seed=7, datasets=("x", "y")
        )
        back = MetricReport.from_json(rep.to_json())
        assert back == rep

    def test_key_order_in_json(self):
        values = {k: 1.0 for k in METRIC_KEYS}
        rep = MetricReport(values=values)
        keys = list(json.loads(rep.to_json()))
        assert keys[: len(METRIC_KEYS)] == list(METRIC_KEYS)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            MetricReport(values={"bogus": 1.0})

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            MetricReport(values={"fpd": float("nan")})


class TestEvaluatePair:
    def _sets(self, rng, n1, n2):
        f1 = rng.normal(size=(n1, 7))
        f2 = rng.normal(size=(n2, 7)) + 0.5
        w1 = rng.uniform(0.5, 2.0, size=(n1, 12))
        w2 = rng.uniform(0.5, 2.0, size=(n2, 12)) + 0.2
        return f1, f2, w1, w2

    def test_all_keys_present_and_finite(self):
        rng = np.random.default_rng(22)
        rep = evaluate_pair(*self._sets(rng, 30, 30), seed=3)
        assert set(rep.values) == set(METRIC_KEYS)
        assert all(np.isfinite(v) for v in rep.values.values())

    def test_deterministic_and_size_tolerant(self):
        rng = np.random.default_rng(23)
        f1, f2, w1, w2 = self._sets(rng, 40, 25)
        a = evaluate_pair(f1, f2, w1, w2, seed=5)
        b = evaluate_pair(f1, f2, w1, w2, seed=5)
        assert a.to_json() == b.to_json()
