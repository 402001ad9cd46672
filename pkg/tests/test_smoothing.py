"""Signal projection: spline/loess/discrete smoothers and span selection."""

from __future__ import annotations

import numpy as np
import pytest

from cmekit import (
    InsufficientLocalData,
    SmootherSpec,
    bspline_basis,
    cv_span,
    make_spline_basis,
    project_residuals,
    project_signal,
    wls,
)


def moderator(n=300, seed=0):
    return np.random.default_rng(seed).uniform(-2.0, 2.0, n)


# ---------------------------------------------------------------------------
# SmootherSpec validation


class TestSmootherSpec:
    def test_unknown_method(self):
        with pytest.raises(ValueError):
            SmootherSpec(method="wavelet")

    def test_df_floor(self):
        with pytest.raises(ValueError):
            SmootherSpec(method="bspline", df=3, degree=3)
        SmootherSpec(method="bspline", df=4, degree=3)

    def test_span_range(self):
        with pytest.raises(ValueError):
            SmootherSpec(method="loess", span=0.0)
        with pytest.raises(ValueError):
            SmootherSpec(method="loess", span=1.5)
        with pytest.raises(ValueError):
            SmootherSpec(method="loess", span_grid=(0.5, 2.0))

    def test_cv_folds_floor(self):
        with pytest.raises(ValueError):
            SmootherSpec(method="loess", cv_folds=1)


# ---------------------------------------------------------------------------
# Spline projection


class TestSplineProjection:
    def test_linearity_in_signal(self, rng):
        x = moderator(seed=1)
        s1 = rng.normal(size=len(x))
        s2 = rng.normal(size=len(x))
        spec = SmootherSpec(method="bspline", df=6)
        basis = make_spline_basis(x)
        f1 = project_signal(s1, x, spec, basis=basis)
        f2 = project_signal(s2, x, spec, basis=basis)
        combo = project_signal(2.0 * s1 - 0.5 * s2, x, spec, basis=basis)
        assert np.allclose(
            combo.theta, 2.0 * f1.theta - 0.5 * f2.theta, atol=1e-10
        )

    def test_in_span_signal_recovered_exactly(self, rng):
        x = moderator(seed=2)
        basis = make_spline_basis(x, degree=3, df=6)
        q = bspline_basis(x, basis)
        beta = rng.normal(size=q.shape[1])
        fit = project_signal(q @ beta, x, SmootherSpec(df=6), basis=basis)
        expected = bspline_basis(fit.grid, basis) @ beta
        assert np.allclose(fit.theta, expected, atol=1e-10)
        assert np.allclose(fit.u, 0.0, atol=1e-10)

    def test_constant_signal_flat_curve(self):
        x = moderator(seed=3)
        fit = project_signal(np.full(len(x), 3.7), x, SmootherSpec(df=6))
        assert np.allclose(fit.theta, 3.7, atol=1e-10)

    def test_normal_equations_residual_orthogonality(self, rng):
        x = moderator(seed=4)
        signal = np.sin(2.0 * x) + rng.normal(size=len(x))
        fit = project_signal(signal, x, SmootherSpec(df=8))
        assert np.max(np.abs(fit.q.T @ fit.u / fit.n)) < 1e-8

    def test_influence_columns_sum_to_zero(self, rng):
        x = moderator(seed=5)
        signal = x**2 + rng.normal(size=len(x))
        fit = project_signal(signal, x, SmootherSpec(df=6))
        psi = fit.influence_matrix()
        assert psi.shape == (fit.n, len(fit.grid))
        assert np.max(np.abs(psi.sum(axis=0) / fit.n)) < 1e-8

    def test_evaluate_matches_grid(self, rng):
        x = moderator(seed=6)
        signal = np.cos(x) + rng.normal(size=len(x))
        fit = project_signal(signal, x, SmootherSpec(df=6))
        assert np.allclose(fit.evaluate(fit.grid), fit.theta, atol=1e-12)

    def test_pinned_basis_reused(self, rng):
        x = moderator(seed=7)
        signal = rng.normal(size=len(x))
        basis = make_spline_basis(x[:150], degree=3, df=5)
        fit = project_signal(signal, x, SmootherSpec(df=5), basis=basis)
        assert fit.basis is basis

    def test_default_grid_50_points(self):
        x = moderator(seed=8)
        fit = project_signal(np.zeros(len(x)), x, SmootherSpec(df=6))
        assert len(fit.grid) == 50
        assert fit.grid[0] == x.min() and fit.grid[-1] == x.max()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            project_signal(np.zeros(5), np.zeros(6), SmootherSpec())


# ---------------------------------------------------------------------------
# Discrete projection


class TestDiscreteProjection:
    def test_group_means(self, rng):
        x = rng.integers(0, 4, 200).astype(np.float64)
        signal = rng.normal(size=200) + x
        fit = project_signal(signal, x, SmootherSpec(method="discrete"))
        assert np.array_equal(fit.grid, np.unique(x))
        for j, v in enumerate(fit.grid):
            assert fit.theta[j] == pytest.approx(signal[x == v].mean(), abs=1e-12)

    def test_matches_saturated_indicator_regression(self, rng):
        x = rng.integers(0, 3, 120).astype(np.float64)
        signal = rng.normal(size=120)
        fit = project_signal(signal, x, SmootherSpec(method="discrete"))
        indicators = np.column_stack([(x == v).astype(float) for v in fit.grid])
        ols = wls(indicators, signal)
        assert np.allclose(fit.theta, ols.coef, atol=1e-12)

    def test_residual_projection_per_level_slope(self, rng):
        x = np.repeat([0.0, 1.0, 2.0], 60)
        d_tilde = rng.normal(size=180)
        slopes = np.array([1.0, -2.0, 0.5])
        y_tilde = slopes[x.astype(int)] * d_tilde
        fit = project_residuals(
            y_tilde, d_tilde, x, SmootherSpec(method="discrete")
        )
        assert np.allclose(fit.theta, slopes, atol=1e-10)


# ---------------------------------------------------------------------------
# Loess projection


class TestLoessProjection:
    def test_full_span_uniform_kernel_is_global_ols(self, rng):
        x = np.linspace(0.0, 1.0, 20)
        signal = rng.normal(size=20)
        spec = SmootherSpec(method="loess", span=1.0, kernel="uniform")
        x0 = 0.37
        fit = project_signal(signal, x, spec, grid=np.array([x0]))
        ols = wls(np.column_stack([np.ones(20), x - x0]), signal)
        assert fit.theta[0] == pytest.approx(float(ols.coef[0]), abs=1e-10)

    def test_constant_signal_flat(self):
        x = moderator(seed=9)
        spec = SmootherSpec(method="loess", span=0.5)
        fit = project_signal(np.full(len(x), -1.25), x, spec)
        assert np.allclose(fit.theta, -1.25, atol=1e-10)

    def test_linear_signal_exact_any_span(self, rng):
        x = moderator(seed=10)
        signal = 2.0 + 3.0 * x
        for span in (0.3, 0.7, 1.0):
            spec = SmootherSpec(method="loess", span=span)
            fit = project_signal(signal, x, spec)
            assert np.allclose(fit.theta, 2.0 + 3.0 * fit.grid, atol=1e-8)

    def test_insufficient_local_data(self):
        x = np.concatenate([np.zeros(10), np.ones(10)])
        spec = SmootherSpec(method="loess", span=0.2)
        with pytest.raises(InsufficientLocalData):
            project_signal(np.zeros(20), x, spec, grid=np.array([0.5]))

    def test_no_influence_representation(self, rng):
        x = moderator(seed=11)
        spec = SmootherSpec(method="loess", span=0.8)
        fit = project_signal(rng.normal(size=len(x)), x, spec)
        with pytest.raises(InsufficientLocalData):
            fit.influence_matrix()
        with pytest.raises(InsufficientLocalData):
            fit.basis_rows(np.array([0.0]))

    def test_span_used_recorded(self, rng):
        x = moderator(seed=12)
        spec = SmootherSpec(method="loess", span=0.35)
        fit = project_signal(rng.normal(size=len(x)), x, spec)
        assert fit.span_used == 0.35


# ---------------------------------------------------------------------------
# Residual projection (partially linear second stage)


class TestProjectResiduals:
    def test_constant_effect_two(self, rng):
        x = moderator(seed=13)
        d_tilde = rng.normal(size=len(x))
        y_tilde = 2.0 * d_tilde
        spline = project_residuals(y_tilde, d_tilde, x, SmootherSpec(df=6))
        assert np.allclose(spline.theta, 2.0, atol=1e-10)
        loess = project_residuals(
            y_tilde, d_tilde, x, SmootherSpec(method="loess", span=0.5)
        )
        assert np.allclose(loess.theta, 2.0, atol=1e-10)

    def test_in_span_effect_recovered(self, rng):
        x = moderator(seed=14)
        basis = make_spline_basis(x, degree=3, df=6)
        beta = rng.normal(size=6)
        theta_true = bspline_basis(x, basis) @ beta
        d_tilde = rng.normal(size=len(x))
        y_tilde = theta_true * d_tilde
        fit = project_residuals(
            y_tilde, d_tilde, x, SmootherSpec(df=6), basis=basis
        )
        expected = bspline_basis(fit.grid, basis) @ beta
        assert np.allclose(fit.theta, expected, atol=1e-10)

    def test_normal_equations(self, rng):
        x = moderator(seed=15)
        d_tilde = rng.normal(size=len(x))
        y_tilde = np.sin(x) * d_tilde + rng.normal(size=len(x))
        fit = project_residuals(y_tilde, d_tilde, x, SmootherSpec(df=6))
        assert np.max(np.abs(fit.q.T @ fit.u / fit.n)) < 1e-8

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            project_residuals(np.zeros(5), np.zeros(5), np.zeros(4), SmootherSpec())


# ---------------------------------------------------------------------------
# Span selection


class TestCvSpan:
    def test_single_candidate(self, rng):
        x = moderator(n=80, seed=16)
        spec = SmootherSpec(method="loess", span_grid=(0.5,))
        assert cv_span(rng.normal(size=80), x, spec) == 0.5

    def test_tie_goes_to_smaller_span(self):
        # exactly linear signal: every span fits perfectly, losses all tie
        x = np.linspace(0.0, 1.0, 40)
        signal = 2.0 + 3.0 * x
        spec = SmootherSpec(method="loess", span_grid=(0.35, 0.5, 1.0))
        assert cv_span(signal, x, spec) == 0.35

    def test_white_noise_prefers_largest_span(self):
        wins = 0
        spec = SmootherSpec(method="loess", cv_folds=5)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1.0, 1.0, 60)
            noise = rng.normal(size=60)
            if cv_span(noise, x, spec, seed=seed) == 1.0:
                wins += 1
        assert wins >= 80

    def test_infeasible_span_disqualified(self):
        # clustered x: the small span cannot cover held-out points
        rng = np.random.default_rng(17)
        x = np.concatenate([rng.uniform(0, 0.05, 30), rng.uniform(0.95, 1.0, 30)])
        signal = rng.normal(size=60)
        spec = SmootherSpec(method="loess", span_grid=(0.02, 1.0), cv_folds=5)
        assert cv_span(signal, x, spec) == 1.0

    def test_all_spans_infeasible(self):
        x = np.array([0.0, 0.0, 1.0, 1.0] * 3)
        spec = SmootherSpec(method="loess", span_grid=(0.01,), cv_folds=2)
        with pytest.raises(InsufficientLocalData):
            cv_span(np.zeros(12), x, spec)
