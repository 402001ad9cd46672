"""Classic estimators: table oracle, linear interaction, binning, kernel."""

from __future__ import annotations

import numpy as np
import pytest

from cmekit import (
    CmeCurve,
    EffectiveSampleTooSmall,
    EmptyBin,
    attach_bands,
    binning_cme,
    cme_from_table,
    default_grid,
    effect_modification,
    kernel_cme,
    linear_cme,
    make_dataset,
)

from conftest import make_binary_ds

# Eight-unit population with two binary covariates and known potential
# outcomes; the weighted averages below are exact rational numbers.
TOY_Y0 = np.array([2.0, 2.0, 3.0, 5.0, 10.0, 4.0, 9.0, 1.0])
TOY_Y1 = np.array([3.0, 0.0, 7.0, 3.0, 8.0, 1.0, 9.0, 0.0])
TOY_X = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0])
TOY_W = np.array([0.5, 0.5, 0.5, 0.5, 2 / 3, 2 / 3, 1 / 3, 1.0])


def make_noiseless_ds(n=500, seed=3, b_d=0.5, b_dx=0.25):
    """Exactly linear outcome so OLS recovers coefficients to rounding."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, n)
    z = rng.normal(size=(n, 2))
    d = (rng.uniform(size=n) < 0.5).astype(np.float64)
    y = 1.0 + (b_d + b_dx * x) * d + 0.7 * x + z @ np.array([0.3, -0.2])
    return make_dataset(y=y, d=d, x=x, z=z)


# ---------------------------------------------------------------------------
# Potential-outcome table oracle


class TestCmeFromTable:
    def test_toy_table_exact(self):
        levels, theta = cme_from_table(TOY_Y0, TOY_Y1, TOY_X, TOY_W)
        assert np.array_equal(levels, [0.0, 1.0, 2.0])
        assert theta[0] == 0.25
        assert theta[1] == -2.0
        assert theta[2] == -1.0
        assert theta[0] - theta[2] == 1.25

    def test_unweighted_default(self):
        levels, theta = cme_from_table(TOY_Y0[:4], TOY_Y1[:4], TOY_X[:4])
        # X = 0 rows have equal weight anyway: mean of (1, -2, 4, -2)
        assert np.array_equal(levels, [0.0])
        assert theta[0] == 0.25

    def test_weighting_changes_answer(self):
        y0 = np.array([0.0, 0.0])
        y1 = np.array([1.0, 3.0])
        x = np.zeros(2)
        _, flat = cme_from_table(y0, y1, x)
        _, tilted = cme_from_table(y0, y1, x, weights=np.array([3.0, 1.0]))
        assert flat[0] == 2.0
        assert tilted[0] == 1.5

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cme_from_table(TOY_Y0, TOY_Y1, TOY_X[:-1])

    def test_bad_weights_rejected(self):
        with pytest.raises(ValueError):
            cme_from_table(TOY_Y0, TOY_Y1, TOY_X, weights=-TOY_W)
        with pytest.raises(ValueError):
            cme_from_table(TOY_Y0, TOY_Y1, TOY_X, weights=np.zeros(8))


# ---------------------------------------------------------------------------
# Linear interaction


class TestLinearCme:
    def test_noiseless_recovery(self):
        ds = make_noiseless_ds()
        res = linear_cme(ds)
        assert res.b_d == pytest.approx(0.5, abs=1e-8)
        assert res.b_dx == pytest.approx(0.25, abs=1e-8)
        expected = 0.5 + 0.25 * res.curve.grid
        assert np.allclose(res.curve.theta, expected, atol=1e-8)

    def test_se_at_zero_is_sqrt_var_d(self):
        ds = make_binary_ds(n=600, seed=1)
        grid = np.array([-1.0, 0.0, 1.0])
        res = linear_cme(ds, grid=grid)
        assert res.curve.se[1] == pytest.approx(np.sqrt(res.var_d), abs=1e-12)
        # away from zero the slope variance and covariance enter
        var1 = res.var_d + res.var_dx + 2.0 * res.cov_d_dx
        assert res.curve.se[2] == pytest.approx(np.sqrt(var1), abs=1e-12)

    def test_flat_effect_slope_insignificant(self):
        ds = make_binary_ds(n=2000, seed=7, effect=lambda x: np.ones_like(x))
        res = linear_cme(ds)
        assert abs(res.b_dx) < 3.0 * np.sqrt(res.var_dx)

    def test_pointwise_ci_width(self):
        ds = make_binary_ds(n=400, seed=2)
        res = linear_cme(ds, alpha=0.05)
        c = res.curve
        half = (c.ci_upper - c.ci_lower) / 2.0
        assert np.allclose(half, 1.959963984540054 * c.se, atol=1e-9)

    def test_extrapolated_grid_flagged(self):
        ds = make_binary_ds(n=200, seed=3)
        res = linear_cme(ds, grid=np.array([-5.0, 0.0, 5.0]))
        assert res.curve.flags.get("extrapolated_grid") is True
        inside = linear_cme(ds, grid=np.array([-0.5, 0.5]))
        assert "extrapolated_grid" not in inside.curve.flags

    def test_curve_metadata(self):
        ds = make_binary_ds(n=150, seed=4)
        res = linear_cme(ds)
        assert res.curve.method == "linear"
        assert res.curve.n == 150
        assert len(res.curve.grid) == 50
        assert res.coef_names[:4] == ["const", "d", "x", "d:x"]


class TestEffectModification:
    def test_same_point_is_null(self):
        ds = make_binary_ds(n=300, seed=5)
        res = linear_cme(ds)
        test = effect_modification(res, 1.0, 1.0)
        assert test.delta == 0.0
        assert test.se == 0.0
        assert test.p_value == 1.0
        assert not test.reject

    def test_noiseless_contrast(self):
        ds = make_noiseless_ds(b_d=1.0, b_dx=2.0)
        res = linear_cme(ds)
        test = effect_modification(res, 3.0, 0.0)
        assert test.delta == pytest.approx(6.0, abs=1e-7)

    def test_strong_moderation_rejected(self):
        ds = make_binary_ds(n=3000, seed=6, effect=lambda x: 2.0 * x)
        res = linear_cme(ds)
        test = effect_modification(res, 1.5, -1.5, alpha=0.05)
        assert test.reject
        assert test.p_value < 1e-6

    def test_se_scales_with_distance(self):
        ds = make_binary_ds(n=500, seed=8)
        res = linear_cme(ds)
        near = effect_modification(res, 0.5, 0.0)
        far = effect_modification(res, 1.0, 0.0)
        assert far.se == pytest.approx(2.0 * near.se, rel=1e-12)


# ---------------------------------------------------------------------------
# Binning


class TestBinningCme:
    def test_single_bin_matches_linear(self):
        ds = make_binary_ds(n=500, seed=10)
        res = binning_cme(ds, n_bins=1)
        lin = linear_cme(ds, grid=res.eval_points)
        assert res.curve.theta[0] == pytest.approx(lin.curve.theta[0], abs=1e-8)
        assert res.curve.se[0] == pytest.approx(lin.curve.se[0], abs=1e-8)

    def test_noiseless_recovery_at_eval_points(self):
        ds = make_noiseless_ds(n=900, seed=11)
        res = binning_cme(ds, n_bins=3)
        expected = 0.5 + 0.25 * res.eval_points
        assert np.allclose(res.curve.theta, expected, atol=1e-8)

    def test_tercile_edges_and_counts(self):
        ds = make_binary_ds(n=600, seed=12)
        res = binning_cme(ds, n_bins=3)
        assert np.allclose(res.edges, np.quantile(ds.x, [0, 1 / 3, 2 / 3, 1]))
        assert res.counts.sum() == ds.n
        assert res.counts.max() - res.counts.min() <= 1
        assert np.all(res.counts_treated <= res.counts)

    def test_median_vs_midpoint_eval(self):
        ds = make_binary_ds(n=400, seed=13)
        med = binning_cme(ds, n_bins=2, eval_rule="median")
        mid = binning_cme(ds, n_bins=2, eval_rule="midpoint")
        assert np.allclose(
            mid.eval_points, (mid.edges[:-1] + mid.edges[1:]) / 2.0
        )
        for j in range(2):
            rows = (ds.x >= med.edges[j]) & (ds.x <= med.edges[j + 1])
            assert med.edges[j] <= med.eval_points[j] <= med.edges[j + 1]
            assert rows.sum() > 0
        with pytest.raises(ValueError):
            binning_cme(ds, eval_rule="mean")

    def test_explicit_cutoffs(self):
        ds = make_binary_ds(n=500, seed=14)
        res = binning_cme(ds, cutoffs=np.array([-0.5, 0.5]))
        assert len(res.eval_points) == 3
        assert np.allclose(res.edges[1:-1], [-0.5, 0.5])

    def test_cutoffs_validation(self):
        ds = make_binary_ds(n=200, seed=15)
        with pytest.raises(ValueError):
            binning_cme(ds, cutoffs=np.array([0.5, -0.5]))
        with pytest.raises(ValueError):
            binning_cme(ds, cutoffs=np.array([ds.x.min() - 1.0]))
        with pytest.raises(ValueError):
            binning_cme(ds, n_bins=0)

    def test_empty_bin_raises(self):
        # no observations strictly between the two cutoffs
        x = np.concatenate([np.linspace(-2, -1, 30), np.linspace(1, 2, 30)])
        rng = np.random.default_rng(16)
        d = (rng.uniform(size=60) < 0.5).astype(np.float64)
        y = x + d + rng.normal(size=60)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((60, 0)))
        with pytest.raises(EmptyBin):
            binning_cme(ds, cutoffs=np.array([-0.9, 0.9]))

    def test_non_identified_bin_flagged(self):
        # left half all control, right half mixed
        rng = np.random.default_rng(17)
        x = np.concatenate([rng.uniform(-2, 0, 80), rng.uniform(0, 2, 80)])
        d = np.concatenate(
            [np.zeros(80), (rng.uniform(size=80) < 0.5).astype(np.float64)]
        )
        y = 1.0 + d * x + x + rng.normal(size=160)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((160, 0)))
        res = binning_cme(ds, cutoffs=np.array([0.0]))
        assert res.non_identified[0]
        assert not res.non_identified[1]
        assert np.isnan(res.curve.theta[0])
        assert np.isfinite(res.curve.theta[1])
        assert res.curve.flags["non_identified_bins"] == [0]

    def test_extras_for_band_refits(self):
        ds = make_binary_ds(n=300, seed=18)
        res = binning_cme(ds, n_bins=2, eval_rule="midpoint")
        assert res.curve.extras["n_bins"] == 2
        assert res.curve.extras["eval_rule"] == "midpoint"
        assert np.array_equal(res.curve.extras["edges"], res.edges)


# ---------------------------------------------------------------------------
# Kernel


class TestKernelCme:
    def test_huge_bandwidth_equals_global_ols(self):
        ds = make_binary_ds(n=300, seed=20)
        grid = np.linspace(ds.x.min(), ds.x.max(), 9)
        ker = kernel_cme(ds, grid=grid, h0=1e6, fully_moderated=False)
        lin = linear_cme(ds, grid=grid)
        assert np.max(np.abs(ker.theta - lin.curve.theta)) < 1e-3

    def test_constant_effect_recovered(self):
        ds = make_binary_ds(n=2000, seed=21, effect=lambda x: np.ones_like(x))
        grid = np.linspace(-1.6, 1.6, 9)
        curve = kernel_cme(ds, grid=grid, seed=0)
        assert np.max(np.abs(curve.theta - 1.0)) < 0.2

    def test_adaptive_bandwidth_grows_where_sparse(self):
        rng = np.random.default_rng(22)
        x = np.clip(rng.normal(size=1200), -2.5, 2.5)
        d = (rng.uniform(size=1200) < 0.5).astype(np.float64)
        y = d + x + rng.normal(size=1200)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((1200, 0)))
        grid = np.array([-2.2, 0.0, 2.2])
        curve = kernel_cme(ds, grid=grid, h0=0.5)
        h = curve.extras["h_grid"]
        assert h[0] > h[1] and h[2] > h[1]

    def test_h0_cv_within_bounds(self):
        ds = make_binary_ds(n=300, seed=23)
        curve = kernel_cme(ds, grid=np.array([0.0]), seed=1)
        span = float(ds.x.max() - ds.x.min())
        assert 0.05 * span <= curve.extras["h0"] <= 2.0 * span

    def test_h0_seed_deterministic(self):
        ds = make_binary_ds(n=250, seed=24)
        a = kernel_cme(ds, grid=np.array([0.0]), seed=5)
        b = kernel_cme(ds, grid=np.array([0.0]), seed=5)
        assert a.extras["h0"] == b.extras["h0"]
        assert np.array_equal(a.theta, b.theta)

    def test_restricted_near_full_at_center(self):
        ds = make_binary_ds(n=1500, seed=25)
        grid = np.array([0.0])
        full = kernel_cme(ds, grid=grid, h0=0.8, fully_moderated=True)
        restr = kernel_cme(ds, grid=grid, h0=0.8, fully_moderated=False)
        gap = abs(full.theta[0] - restr.theta[0])
        assert gap <= 2.0 * (full.se[0] + restr.se[0])
        assert full.extras["fully_moderated"] is True
        assert restr.extras["fully_moderated"] is False

    def test_effective_sample_too_small_warns(self):
        ds = make_binary_ds(n=60, seed=26)
        with pytest.warns(EffectiveSampleTooSmall):
            curve = kernel_cme(ds, grid=np.array([0.0, 1.0]), h0=0.02)
        flagged = curve.flags["effective_sample_too_small"]
        assert len(flagged) > 0
        assert np.all(curve.se[flagged] == np.inf)
        assert np.all(np.isnan(curve.theta[flagged]))


# ---------------------------------------------------------------------------
# Curve container and band attachment


class TestCmeCurve:
    def _plain(self, k=5):
        g = np.linspace(0, 1, k)
        th = np.zeros(k)
        se = np.ones(k)
        return CmeCurve(
            grid=g,
            theta=th,
            se=se,
            ci_lower=th - se,
            ci_upper=th + se,
            method="linear",
            n=10,
            alpha=0.05,
        )

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            CmeCurve(
                grid=np.array([0.0, 0.0]),
                theta=np.zeros(2),
                se=np.ones(2),
                ci_lower=np.zeros(2),
                ci_upper=np.zeros(2),
                method="linear",
                n=5,
                alpha=0.05,
            )

    def test_negative_se_rejected(self):
        with pytest.raises(ValueError):
            CmeCurve(
                grid=np.array([0.0, 1.0]),
                theta=np.zeros(2),
                se=np.array([1.0, -0.5]),
                ci_lower=np.zeros(2),
                ci_upper=np.zeros(2),
                method="linear",
                n=5,
                alpha=0.05,
            )

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            CmeCurve(
                grid=np.array([0.0, 1.0]),
                theta=np.zeros(3),
                se=np.ones(3),
                ci_lower=np.zeros(3),
                ci_upper=np.zeros(3),
                method="linear",
                n=5,
                alpha=0.05,
            )

    def test_uniform_must_contain_pointwise(self):
        g = np.array([0.0, 1.0])
        with pytest.raises(ValueError):
            CmeCurve(
                grid=g,
                theta=np.zeros(2),
                se=np.ones(2),
                ci_lower=-np.ones(2),
                ci_upper=np.ones(2),
                method="linear",
                n=5,
                alpha=0.05,
                uci_lower=np.array([-0.5, -0.5]),
                uci_upper=np.array([0.5, 0.5]),
            )

    def test_attach_bands_widens_and_flags(self):
        curve = self._plain()
        narrow_lo = curve.ci_lower + 0.5
        narrow_hi = curve.ci_upper - 0.5
        out = attach_bands(curve, narrow_lo, narrow_hi)
        assert np.all(out.uci_lower <= out.ci_lower)
        assert np.all(out.uci_upper >= out.ci_upper)
        assert out.flags["uniform_band_widened"] is True

    def test_attach_bands_keeps_wider(self):
        curve = self._plain()
        lo = curve.ci_lower - 0.3
        hi = curve.ci_upper + 0.3
        out = attach_bands(curve, lo, hi)
        assert np.array_equal(out.uci_lower, lo)
        assert np.array_equal(out.uci_upper, hi)
        assert "uniform_band_widened" not in out.flags

    def test_default_grid(self):
        x = np.array([2.0, -1.0, 4.0])
        g = default_grid(x, size=7)
        assert g[0] == -1.0 and g[-1] == 4.0 and len(g) == 7
        assert np.all(np.diff(g) > 0)
