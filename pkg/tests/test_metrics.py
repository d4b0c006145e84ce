import numpy as np
import pytest

from eivgmm.metrics import fast_mcd, mc_se_summary, robust_mse


class TestRobustMse:
    def test_zero_error_matrix(self):
        estimates = np.tile([1.0, 0.5, 2.0], (50, 1))
        with pytest.warns(RuntimeWarning, match="MAD"):
            r = robust_mse(estimates, np.array([1.0, 0.5, 2.0]))
        assert r.det_metric == 0.0
        assert r.kept_rows >= 45

    def test_trim_count(self, rng):
        m = 100
        estimates = rng.normal(size=(m, 3))
        r = robust_mse(estimates, np.zeros(3))
        assert abs(r.kept_rows - int(np.ceil(0.9 * m))) <= 1

    def test_gaussian_oracle(self):
        # iid N(theta0, sigma^2 I): det(1000 * MSE_rob) matches a direct
        # pipeline simulation oracle with the same trimming rule
        rng = np.random.default_rng(42)
        m, k, sigma2 = 500, 3, 1e-3
        estimates = np.sqrt(sigma2) * rng.standard_normal((m, k))
        r = robust_mse(estimates, np.zeros(k), seed=3)
        # oracle: expected shrinkage of the second moment when the 10% most
        # extreme (by Mahalanobis distance) rows are removed, estimated by
        # direct simulation with known scatter
        oracle_rng = np.random.default_rng(7)
        shrink = []
        for _ in range(40):
            a = oracle_rng.standard_normal((m, k))
            d = (a**2).sum(axis=1)
            cut = np.sort(d)[int(np.ceil(0.9 * m)) - 1]
            kept = a[d <= cut]
            shrink.append(np.diag(kept.T @ kept / kept.shape[0]).mean())
        c = np.mean(shrink)
        expected = np.linalg.det(1000.0 * c * sigma2 * np.eye(k))
        assert 0.7 * expected <= r.det_metric <= 1.3 * expected

    def test_outlier_robustness(self):
        rng = np.random.default_rng(5)
        m, k = 200, 3
        clean = 0.03 * rng.standard_normal((m, k))
        r_clean = robust_mse(clean, np.zeros(k), seed=1)
        contaminated = clean.copy()
        idx = rng.choice(m, size=10, replace=False)
        contaminated[idx] += 100.0
        r_cont = robust_mse(contaminated, np.zeros(k), seed=1)
        # the trimmed metric barely moves (the kept set reaches slightly
        # deeper into the clean tail), while the untrimmed det explodes
        assert abs(r_cont.det_metric - r_clean.det_metric) <= 0.30 * r_clean.det_metric
        a = contaminated
        untrimmed = np.linalg.det(1000.0 * a.T @ a / m)
        assert untrimmed > 100.0 * r_cont.det_metric

    def test_row_permutation_invariant(self, rng):
        estimates = rng.normal(size=(80, 2))
        r1 = robust_mse(estimates, np.zeros(2), seed=2)
        r2 = robust_mse(estimates[rng.permutation(80)], np.zeros(2), seed=2)
        assert np.isclose(r1.det_metric, r2.det_metric, rtol=1e-10)

    def test_scaling_law(self, rng):
        estimates = rng.normal(size=(150, 2))
        r1 = robust_mse(estimates, np.zeros(2), seed=4)
        r2 = robust_mse(3.0 * estimates, np.zeros(2), seed=4)
        # det scales as c^(2k) exactly before trimming, approximately after
        assert abs(r2.det_metric / r1.det_metric - 3.0**4) <= 0.05 * 3.0**4

    def test_requires_enough_rows(self, rng):
        with pytest.raises(ValueError, match="20"):
            robust_mse(rng.normal(size=(10, 2)), np.zeros(2))

    def test_singular_scatter_fallback(self):
        rng = np.random.default_rng(9)
        col = rng.normal(size=60)
        estimates = np.column_stack([col, 2.0 * col])  # rank-1 scatter
        with pytest.warns(RuntimeWarning, match="MAD"):
            r = robust_mse(estimates, np.zeros(2), seed=1)
        assert np.isfinite(r.det_metric)


class TestFastMcd:
    def test_recovers_clean_scatter(self):
        rng = np.random.default_rng(12)
        a = rng.multivariate_normal([0, 0], [[1.0, 0.3], [0.3, 0.5]], size=400)
        loc, scatter = fast_mcd(a, seed=5)
        # MCD scatter is a (biased, consistent up to a factor) robust scatter:
        # check shape, not scale
        ratio = scatter / np.array([[1.0, 0.3], [0.3, 0.5]])
        assert abs(ratio[0, 1] / ratio[0, 0] - 1.0) < 0.25
        assert np.all(np.abs(loc) < 0.15)

    def test_ignores_gross_outliers(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((200, 2))
        a[:40] += 50.0
        _, scatter = fast_mcd(a, seed=5)
        assert np.all(np.diag(scatter) < 5.0)

    def test_deterministic(self, rng):
        a = rng.standard_normal((100, 3))
        l1, s1 = fast_mcd(a, seed=11)
        l2, s2 = fast_mcd(a, seed=11)
        assert np.array_equal(l1, l2)
        assert np.array_equal(s1, s2)


class TestMcSeSummary:
    def test_constant_columns(self):
        estimates = np.tile([1.0, 2.0], (30, 1))
        avg = np.abs(np.random.default_rng(1).normal(size=(30, 2)))
        s = mc_se_summary(estimates, avg)
        assert np.array_equal(s.mc_se, [0.0, 0.0])
        assert np.allclose(s.avg_se, avg.mean(axis=0))

    def test_sampling_distribution(self):
        rng = np.random.default_rng(21)
        estimates = 0.03 * rng.standard_normal((500, 1))
        s = mc_se_summary(estimates, np.full((500, 1), 0.03))
        assert abs(s.mc_se[0] - 0.03) < 0.002

    def test_pairing_shape(self, rng):
        s = mc_se_summary(rng.normal(size=(40, 5)), np.abs(rng.normal(size=(40, 5))))
        assert s.mc_se.shape == (5,) and s.avg_se.shape == (5,)
