"""Estimator correctness against independent oracles.

Each DERIVED expectation is computed here by a brute-force or dense-algebra
route that never touches the implementation under test: explicit pairwise
loops for the robust statistics, a literal likelihood grid for the
change-point posterior, a dense matrix inverse for the GP, and hand
arithmetic for the pooling rules.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trenddx.estimators import (
    CohortStats,
    EstimatorError,
    GpKernelParams,
    change_point_posterior,
    cohort_zscore,
    fit_mixed_effects,
    gp_posterior,
    impute_stacks,
    mann_kendall,
    ols_slope,
    pca_project,
    rubin_pool,
    theil_sen,
)
from trenddx.series import Panel, TimeSeries


def series(t, y) -> TimeSeries:
    return TimeSeries(np.asarray(t, dtype=float), np.asarray(y, dtype=float))


class TestTheilSen:
    def test_exact_line(self):
        t = np.arange(4.0)
        assert theil_sen(series(t, 2 * t + 1)) == pytest.approx(2.0, abs=1e-12)

    def test_constant(self):
        assert theil_sen(series(np.arange(5.0), np.full(5, 3.3))) == 0.0

    def test_outlier_matches_pairwise_oracle(self):
        t = np.arange(7.0)
        y = 1.5 * t + 0.3
        y[3] += 50.0  # gross outlier
        s = series(t, y)
        slopes = []
        for a in range(7):
            for b in range(a + 1, 7):
                slopes.append((y[b] - y[a]) / (t[b] - t[a]))
        assert len(slopes) == 21
        assert theil_sen(s) == pytest.approx(float(np.median(slopes)), abs=1e-15)

    def test_needs_two_points(self):
        with pytest.raises(EstimatorError):
            theil_sen(series([0.0], [1.0]))

    @given(
        shift=st.floats(-100, 100, allow_nan=False),
        scale=st.floats(0.1, 50, allow_nan=False),
    )
    @settings(max_examples=50, deadline=None)
    def test_shift_invariant_scale_equivariant(self, shift, scale):
        rng = np.random.default_rng(4)
        t = np.sort(rng.uniform(0, 10, 9))
        t += np.arange(9) * 1e-9
        y = rng.normal(size=9)
        base = theil_sen(series(t, y))
        assert theil_sen(series(t, y + shift)) == pytest.approx(base, abs=1e-9)
        assert theil_sen(series(t, y * scale)) == pytest.approx(base * scale, rel=1e-9)


class TestMannKendall:
    def test_strictly_increasing(self):
        res = mann_kendall(series(np.arange(5.0), np.arange(5.0)))
        assert res.s == 10  # n(n-1)/2
        assert res.direction == "up"

    def test_strictly_decreasing(self):
        res = mann_kendall(series(np.arange(5.0), -np.arange(5.0)))
        assert res.s == -10
        assert res.direction == "down"

    def test_matches_pair_count_oracle(self):
        rng = np.random.default_rng(17)
        y = rng.integers(0, 5, size=10).astype(float)  # ties on purpose
        s = 0
        for a in range(10):
            for b in range(a + 1, 10):
                s += int(np.sign(y[b] - y[a]))
        assert mann_kendall(series(np.arange(10.0), y)).s == s

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=12)
        t = np.arange(12.0)
        s1 = mann_kendall(series(t, y)).s
        s2 = mann_kendall(series(t, np.exp(y))).s  # strictly monotone map
        assert s1 == s2

    def test_needs_three_points(self):
        with pytest.raises(EstimatorError):
            mann_kendall(series([0.0, 1.0], [1.0, 2.0]))

    def test_flat_when_z_small(self):
        res = mann_kendall(series(np.arange(4.0), [1.0, 2.0, 1.0, 2.0]))
        assert res.direction == "flat"


class TestChangePoint:
    def test_constant_series_uniform(self):
        res = change_point_posterior(series(np.arange(6.0), np.full(6, 2.0)))
        probs = list(res.posterior.values())
        assert all(p == pytest.approx(1 / 5, abs=1e-12) for p in probs)

    def test_posterior_normalized(self):
        rng = np.random.default_rng(0)
        res = change_point_posterior(series(np.arange(15.0), rng.normal(size=15)))
        assert sum(res.posterior.values()) == pytest.approx(1.0, abs=1e-10)
        assert set(res.posterior) == set(range(1, 15))

    def test_step_series_matches_grid_oracle(self):
        y = np.array([0.0] * 10 + [5.0] * 10)
        res = change_point_posterior(series(np.arange(20.0), y))
        # independent evaluation of the normalized likelihood grid
        t_count = 20
        logs = []
        for tau in range(1, t_count):
            seg1, seg2 = y[:tau], y[tau:]
            sse = np.sum((seg1 - seg1.mean()) ** 2) + np.sum((seg2 - seg2.mean()) ** 2)
            sig = max(sse / t_count, 1e-12)
            logs.append(-0.5 * t_count * math.log(2 * math.pi * sig) - sse / (2 * sig))
        w = np.exp(np.array(logs) - max(logs))
        oracle = w / w.sum()
        assert res.mode == int(np.argmax(oracle)) + 1 == 10
        assert res.mode_mass == pytest.approx(float(oracle.max()), abs=1e-12)
        assert res.mode_mass > 0.99

    def test_reversal_maps_mode(self):
        rng = np.random.default_rng(5)
        y = np.concatenate([rng.normal(0, 0.3, 8), rng.normal(4, 0.3, 6)])
        t = np.arange(14.0)
        fwd = change_point_posterior(series(t, y))
        rev = change_point_posterior(series(t, y[::-1]))
        assert rev.mode == 14 - fwd.mode

    def test_needs_four_points(self):
        with pytest.raises(EstimatorError):
            change_point_posterior(series(np.arange(3.0), [0.0, 1.0, 2.0]))


class TestGaussianProcess:
    def test_empty_train_gives_prior(self):
        params = GpKernelParams(2.0, 3.0, 0.5)
        post = gp_posterior(None, 4.2, params)
        assert post.mean == 0.0
        assert post.variance == 3.0

    def test_noise_free_interpolation(self):
        train = series([0.0, 1.0, 3.0], [1.0, 2.0, 0.5])
        params = GpKernelParams(1.0, 1.0, 0.0)
        for t, y in zip(train.t, train.y):
            post = gp_posterior(train, float(t), params)
            assert post.mean == pytest.approx(float(y), abs=1e-8)
            assert post.variance <= 1e-8

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(9)
        params = GpKernelParams(1.7, 2.2, 0.3)
        for _ in range(25):
            n = int(rng.integers(3, 11))
            x = np.sort(rng.uniform(0, 10, n))
            x += np.arange(n) * 1e-9
            y = rng.normal(size=n)
            q = float(rng.uniform(0, 10))
            train = series(x, y)
            post = gp_posterior(train, q, params)

            def k(a, b):
                return params.signal_var * np.exp(-((a - b) ** 2) / (2 * params.lengthscale**2))

            big_k = k(x[:, None], x[None, :]) + params.noise_var * np.eye(n)
            k_star = k(np.full(n, q), x)
            inv = np.linalg.inv(big_k)
            mean = k_star @ inv @ y
            var = params.signal_var - k_star @ inv @ k_star
            assert post.mean == pytest.approx(float(mean), abs=1e-8)
            assert post.variance == pytest.approx(float(var), abs=1e-8)

    def test_posterior_tighter_than_prior_with_noise(self):
        train = series([0.0, 1.0, 2.0], [0.5, 0.1, -0.2])
        params = GpKernelParams(1.0, 1.0, 0.2)
        post = gp_posterior(train, 1.0, params)
        assert 0.0 <= post.variance < params.signal_var

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            GpKernelParams(0.0, 1.0, 0.0)


class TestImputation:
    def test_linear_series_zero_noise(self):
        t = np.array([0.0, 1.0, 2.0, 4.0])
        s = series(t, 2 * t)
        stacks = impute_stacks(s, [0.5, 3.0], k=5, seed=1)
        assert stacks.noise_var == 0.0
        for stack in stacks.stacks:
            np.testing.assert_allclose(stack.y, 2 * stack.t)

    def test_stacks_keep_observations_exact(self):
        rng = np.random.default_rng(2)
        t = np.sort(rng.uniform(0, 10, 6))
        s = series(t, rng.normal(size=6))
        stacks = impute_stacks(s, [float(t[0] + 0.1)], k=3, seed=0)
        for stack in stacks.stacks:
            mask = np.isin(stack.t, s.t)
            np.testing.assert_array_equal(stack.y[mask], s.y)

    def test_no_extrapolation(self):
        s = series([0.0, 1.0], [0.0, 1.0])
        with pytest.raises(EstimatorError, match="span"):
            impute_stacks(s, [2.0], k=2, seed=0)

    def test_rubin_degenerate(self):
        pooled = rubin_pool([1.0, 1.0, 1.0, 1.0, 1.0])
        assert pooled.point == 1.0
        assert pooled.between_var == 0.0
        assert pooled.total_var == pooled.within_var == 0.0

    def test_rubin_matches_hand_arithmetic(self):
        est = [1.0, 1.2, 0.9, 1.1, 1.3]
        within = [0.04, 0.05, 0.03, 0.04, 0.06]
        pooled = rubin_pool(est, within)
        w = sum(within) / 5
        mean = sum(est) / 5
        b = sum((e - mean) ** 2 for e in est) / 4
        assert pooled.point == pytest.approx(mean, abs=1e-15)
        assert pooled.within_var == pytest.approx(w, abs=1e-15)
        assert pooled.between_var == pytest.approx(b, abs=1e-15)
        assert pooled.total_var == pytest.approx(w + 1.2 * b, abs=1e-12)
        assert pooled.total_var >= pooled.within_var


class TestCohortZ:
    def test_at_mean(self):
        res = cohort_zscore(10.0, CohortStats(10.0, 2.0))
        assert res.z == 0.0 and not res.anomalous

    def test_boundary_is_strict(self):
        res = cohort_zscore(10.0 + 2.5 * 2.0, CohortStats(10.0, 2.0))
        assert res.z == pytest.approx(2.5)
        assert not res.anomalous

    def test_beyond_threshold(self):
        res = cohort_zscore(16.0, CohortStats(10.0, 2.0))
        assert res.z == pytest.approx(3.0) and res.anomalous

    def test_sigma_validated(self):
        with pytest.raises(ValueError):
            CohortStats(0.0, 0.0)


class TestPca:
    def test_single_analyte_identity(self):
        row = np.array([[1.0, 3.0, 2.0, 4.0]])
        res = pca_project(row, 1)
        np.testing.assert_allclose(res.projected[0], row[0] - row.mean(), atol=1e-12)

    def test_rank_one_reconstruction(self):
        base = np.array([1.0, 2.0, 3.0, 4.0])
        rows = np.vstack([base, 2 * base])
        res = pca_project(rows, 1)
        centered = rows - rows.mean(axis=1, keepdims=True)
        recon = res.components @ res.projected
        np.testing.assert_allclose(recon, centered, atol=1e-10)

    def test_variances_match_eigen_oracle(self):
        rng = np.random.default_rng(12)
        rows = rng.normal(size=(5, 40))
        res = pca_project(rows, 5)
        centered = rows - rows.mean(axis=1, keepdims=True)
        oracle_vals = np.sort(np.linalg.eigvalsh(centered @ centered.T / 39))[::-1]
        proj_vars = np.var(res.projected, axis=1, ddof=1)
        np.testing.assert_allclose(proj_vars, oracle_vals, rtol=1e-10)
        np.testing.assert_allclose(res.eigenvalues, oracle_vals, rtol=1e-10)

    def test_rank_limited_reported(self):
        base = np.array([1.0, 2.0, 3.0, 4.0])
        rows = np.vstack([base, 2 * base, -base])
        res = pca_project(rows, 3)
        assert res.rank_limited
        assert res.components.shape[1] == 1


class TestMixedEffects:
    def test_single_patient_exact_line(self):
        t = np.arange(6.0)
        fit = fit_mixed_effects(Panel({"p": series(t, 3.0 * t)}))
        assert fit.beta1 == pytest.approx(3.0, abs=1e-9)
        assert fit.sigma_eps2 < 1e-12
        assert fit.converged

    def test_noise_free_line_reproduces_ols(self):
        rng = np.random.default_rng(8)
        t = np.sort(rng.uniform(0, 20, 9))
        y = -0.7 * t + 4.1
        fit = fit_mixed_effects(Panel({"p": series(t, y)}))
        # independent normal-equation OLS
        x = np.column_stack([np.ones_like(t), t])
        beta = np.linalg.solve(x.T @ x, x.T @ y)
        assert fit.beta0 == pytest.approx(float(beta[0]), abs=1e-9)
        assert fit.beta1 == pytest.approx(float(beta[1]), abs=1e-9)

    def test_two_patients_offsets(self):
        rng = np.random.default_rng(7)
        t = np.arange(8.0)
        c = 2.0
        panel = Panel(
            {
                "a": series(t, 0.5 * t + c + rng.normal(0, 0.01, 8)),
                "b": series(t, 0.5 * t - c + rng.normal(0, 0.01, 8)),
            }
        )
        fit = fit_mixed_effects(panel)
        assert fit.beta1 == pytest.approx(0.5, abs=1e-2)
        assert fit.sigma_u2 == pytest.approx(c**2, rel=0.1)
        assert abs(sum(fit.per_patient_u.values())) < 1e-8

    def test_noise_free_offsets_hit_boundary(self):
        # unbounded likelihood (zero residual after intercept shifts): the
        # profile pins the upper grid boundary and says so
        t = np.arange(8.0)
        panel = Panel({"a": series(t, 0.5 * t + 2), "b": series(t, 0.5 * t - 2)})
        fit = fit_mixed_effects(panel)
        assert fit.beta1 == pytest.approx(0.5, abs=1e-6)
        assert not fit.converged

    def test_monte_carlo_recovery(self):
        hits = 0
        n_seeds = 60
        for seed in range(n_seeds):
            rng = np.random.default_rng(seed)
            patients = {}
            for i in range(30):
                n = int(rng.integers(4, 10))
                t = np.sort(rng.uniform(0, 100, n)) + np.arange(n) * 1e-6
                y = 1.0 + 0.05 * t + rng.normal(0, 1.0) + rng.normal(0, 0.5, n)
                patients[f"p{i:02d}"] = series(t, y)
            fit = fit_mixed_effects(Panel(patients))
            if abs(fit.beta1 - 0.05) <= 3 * fit.se_beta1:
                hits += 1
        assert hits >= 0.95 * n_seeds

    def test_ar1_estimated_on_long_series(self):
        rng = np.random.default_rng(21)
        patients = {}
        for i in range(10):
            n = 12
            t = np.arange(float(n)) + rng.uniform(0, 0.3, n).cumsum()
            eps = np.zeros(n)
            for j in range(1, n):
                eps[j] = 0.6 * eps[j - 1] + rng.normal(0, 0.4)
            patients[f"p{i}"] = series(np.sort(t), 0.2 * t + rng.normal(0, 1.0) + eps)
        fit = fit_mixed_effects(Panel(patients), use_ar1=True)
        assert fit.ar1_rho is not None
        assert -0.95 <= fit.ar1_rho <= 0.95
        assert fit.beta1 == pytest.approx(0.2, abs=0.15)

    def test_ar1_skipped_on_short_series(self):
        t = np.arange(5.0)
        panel = Panel({"a": series(t, t), "b": series(t, t + 1)})
        fit = fit_mixed_effects(panel, use_ar1=True)
        assert fit.ar1_rho is None

    def test_degenerate_design_rejected(self):
        with pytest.raises(EstimatorError, match="degenerate|2 points"):
            fit_mixed_effects(Panel({"a": series([1.0], [2.0]), "b": series([1.0], [3.0])}))


class TestOls:
    def test_line(self):
        t = np.arange(5.0)
        slope, intercept = ols_slope(series(t, 2.5 * t - 1))
        assert slope == pytest.approx(2.5, abs=1e-10)
        assert intercept == pytest.approx(-1.0, abs=1e-10)
