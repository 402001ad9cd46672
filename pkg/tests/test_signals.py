"""Signal constructors: formulas, clipping, SDIM oracle, orthogonality."""

from __future__ import annotations

import numpy as np
import pytest

from cmekit import (
    NoOverlapInCell,
    NuisanceFit,
    UnclippedPropensity,
    aipw_signal,
    cme_from_table,
    cmet_signals,
    clip_propensity,
    gateaux_orthogonality_check,
    ipw_signal,
    make_dataset,
    marginal_propensity,
    outcome_signal,
    sdim_oracle,
)

from conftest import make_binary_ds


def tiny_ds():
    y = np.array([1.0, 2.0])
    d = np.array([1.0, 0.0])
    x = np.array([0.0, 1.0])
    return make_dataset(y=y, d=d, x=x, z=np.empty((2, 0)))


def flat_nuis(n, mu1=0.0, mu0=0.0, pi=0.5):
    return NuisanceFit(
        kind="binary",
        mu1=np.full(n, mu1),
        mu0=np.full(n, mu0),
        pi=np.full(n, pi),
    )


def random_nuis(rng, n):
    return NuisanceFit(
        kind="binary",
        mu1=rng.normal(size=n),
        mu0=rng.normal(size=n),
        pi=rng.uniform(0.1, 0.9, n),
    )


# ---------------------------------------------------------------------------
# Clipping and validation


class TestClipPropensity:
    def test_clips_both_tails(self):
        out = clip_propensity(np.array([0.005, 0.5, 0.999]), alpha=0.01)
        assert np.array_equal(out, [0.01, 0.5, 0.99])

    def test_identity_inside_band(self):
        pi = np.array([0.01, 0.3, 0.99])
        assert np.array_equal(clip_propensity(pi, alpha=0.01), pi)

    def test_alpha_validated(self):
        with pytest.raises(ValueError):
            clip_propensity(np.array([0.5]), alpha=0.0)
        with pytest.raises(ValueError):
            clip_propensity(np.array([0.5]), alpha=0.5)

    def test_unclipped_propensity_refused(self):
        ds = tiny_ds()
        bad = NuisanceFit(
            kind="binary",
            mu1=np.zeros(2),
            mu0=np.zeros(2),
            pi=np.array([0.0, 0.5]),
        )
        with pytest.raises(UnclippedPropensity):
            aipw_signal(ds, bad)
        bad.pi = np.array([0.5, 1.0])
        with pytest.raises(UnclippedPropensity):
            ipw_signal(ds, bad)


class TestNuisanceFit:
    def test_missing_fields_rejected(self):
        with pytest.raises(ValueError):
            NuisanceFit(kind="binary", mu1=np.zeros(3), mu0=np.zeros(3))
        with pytest.raises(ValueError):
            NuisanceFit(kind="continuous", g=np.zeros(3))
        with pytest.raises(ValueError):
            NuisanceFit(kind="other")

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            NuisanceFit(
                kind="binary", mu1=np.zeros(3), mu0=np.zeros(3), pi=np.zeros(4)
            )

    def test_kind_mismatch_rejected(self):
        ds = tiny_ds()
        cont = NuisanceFit(kind="continuous", g=np.zeros(2), m=np.zeros(2))
        with pytest.raises(ValueError):
            aipw_signal(ds, cont)


# ---------------------------------------------------------------------------
# Formula evaluations


class TestSignalFormulas:
    def test_aipw_hand_values(self):
        ds = tiny_ds()
        sig = aipw_signal(ds, flat_nuis(2))
        # treated row: 0 + 1*(1-0)/0.5 = 2; control row: -(2-0)/0.5 = -4
        assert sig.values[0] == 2.0
        assert sig.values[1] == -4.0
        assert sig.kind == "aipw"

    def test_ipw_hand_values(self):
        ds = tiny_ds()
        sig = ipw_signal(ds, flat_nuis(2))
        assert sig.values[0] == 2.0
        assert sig.values[1] == -4.0
        assert sig.kind == "ipw"

    def test_outcome_hand_values(self):
        ds = tiny_ds()
        sig = outcome_signal(ds, flat_nuis(2, mu1=3.0, mu0=1.0))
        assert np.array_equal(sig.values, [2.0, 2.0])
        assert sig.kind == "outcome"

    def test_perfect_outcome_model_kills_correction(self):
        rng = np.random.default_rng(0)
        n = 200
        x = rng.uniform(-1, 1, n)
        d = (rng.uniform(size=n) < 0.5).astype(np.float64)
        mu1 = 1.0 + x
        mu0 = np.sin(x)
        y = np.where(d == 1.0, mu1, mu0)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((n, 0)))
        nuis = NuisanceFit(kind="binary", mu1=mu1, mu0=mu0, pi=np.full(n, 0.4))
        aipw = aipw_signal(ds, nuis)
        out = outcome_signal(ds, nuis)
        assert np.allclose(aipw.values, out.values, atol=1e-12)

    def test_aipw_decomposition_identity(self, rng):
        n = 300
        ds = make_binary_ds(n=n, seed=30)
        nuis = random_nuis(rng, n)
        aipw = aipw_signal(ds, nuis).values
        out = outcome_signal(ds, nuis).values
        corr = ds.d * (ds.y - nuis.mu1) / nuis.pi - (1.0 - ds.d) * (
            ds.y - nuis.mu0
        ) / (1.0 - nuis.pi)
        assert np.allclose(aipw, out + corr, atol=1e-12)

    def test_aipw_vs_ipw_identity(self, rng):
        n = 300
        ds = make_binary_ds(n=n, seed=31)
        nuis = random_nuis(rng, n)
        aipw = aipw_signal(ds, nuis).values
        ipw = ipw_signal(ds, nuis).values
        # the regression pieces enter with weights (1 - D/pi), (1 - (1-D)/(1-pi))
        adj = nuis.mu1 * (1.0 - ds.d / nuis.pi) - nuis.mu0 * (
            1.0 - (1.0 - ds.d) / (1.0 - nuis.pi)
        )
        assert np.allclose(aipw, ipw + adj, atol=1e-12)


# ---------------------------------------------------------------------------
# Subgroup difference in means


class TestSdimOracle:
    def test_hand_enumeration(self):
        x = np.array([0, 0, 0, 0, 1, 1, 1], dtype=np.float64)
        d = np.array([1, 1, 0, 0, 1, 0, 0], dtype=np.float64)
        y = np.array([3, 7, 2, 4, 1, 5, 9], dtype=np.float64)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((7, 0)))
        levels, theta = sdim_oracle(ds)
        assert np.array_equal(levels, [0.0, 1.0])
        assert theta[0] == 2.0
        assert theta[1] == -6.0

    def test_matches_cellwise_ipw_average(self):
        rng = np.random.default_rng(32)
        for trial in range(5):
            n = 240
            x = rng.integers(0, 4, n).astype(np.float64)
            d = (rng.uniform(size=n) < 0.5).astype(np.float64)
            # force both arms into every cell
            for v in range(4):
                rows = np.flatnonzero(x == v)
                d[rows[0]] = 1.0
                d[rows[1]] = 0.0
            y = rng.normal(size=n) + x * d
            ds = make_dataset(y=y, d=d, x=x, z=np.empty((n, 0)))
            levels, theta = sdim_oracle(ds)
            pi = np.empty(n)
            for v in levels:
                cell = x == v
                pi[cell] = d[cell].mean()
            nuis = NuisanceFit(
                kind="binary", mu1=np.zeros(n), mu0=np.zeros(n), pi=pi
            )
            ipw = ipw_signal(ds, nuis).values
            cellwise = np.array([ipw[x == v].mean() for v in levels])
            assert np.allclose(cellwise, theta, atol=1e-12)

    def test_no_overlap_raises(self):
        # observed half of the toy potential-outcome table: the x=2 cell
        # holds a single control unit
        y = np.array([3.0, 2.0, 7.0, 5.0, 8.0, 4.0, 9.0, 1.0])
        d = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
        x = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0])
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((8, 0)))
        with pytest.raises(NoOverlapInCell):
            sdim_oracle(ds)

    def test_toy_table_sdim_differs_from_estimand(self):
        # dropping the non-overlapping cell, SDIM on observed outcomes is a
        # different number than the potential-outcome oracle: selection into
        # treatment biases the naive contrast
        y0 = np.array([2.0, 2.0, 3.0, 5.0])
        y1 = np.array([3.0, 0.0, 7.0, 3.0])
        x = np.zeros(4)
        _, truth = cme_from_table(y0, y1, x)
        d = np.array([1.0, 0.0, 1.0, 0.0])
        y_obs = np.where(d == 1.0, y1, y0)
        ds = make_dataset(y=y_obs, d=d, x=x, z=np.empty((4, 0)))
        _, naive = sdim_oracle(ds)
        assert truth[0] == 0.25
        assert naive[0] == 1.5


# ---------------------------------------------------------------------------
# Treated-effect signals


class TestCmetSignals:
    def _fixture(self):
        rng = np.random.default_rng(33)
        n = 400
        x = rng.uniform(-2, 2, n)
        d = (rng.uniform(size=n) < 0.5).astype(np.float64)
        y = 1.0 + d * x + rng.normal(size=n)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((n, 0)))
        nuis = NuisanceFit(
            kind="binary",
            mu1=1.0 + x,
            mu0=np.ones(n),
            pi=np.full(n, 0.5),
        )
        return ds, nuis

    def test_outcome_signal_treated_rows(self):
        ds, nuis = self._fixture()
        sig = cmet_signals(ds, nuis)
        treated = ds.d == 1.0
        expected = (ds.y[treated] - nuis.mu0[treated]) / sig.p_x[treated]
        assert np.allclose(sig.outcome.values[treated], expected, atol=1e-12)
        assert np.all(sig.outcome.values[~treated] == 0.0)

    def test_aipw_equals_outcome_on_treated(self):
        ds, nuis = self._fixture()
        sig = cmet_signals(ds, nuis)
        treated = ds.d == 1.0
        assert np.allclose(
            sig.aipw.values[treated], sig.outcome.values[treated], atol=1e-12
        )

    def test_ipw_formula(self):
        ds, nuis = self._fixture()
        sig = cmet_signals(ds, nuis)
        expected = ds.y * (ds.d - nuis.pi) / (sig.p_x * (1.0 - nuis.pi))
        assert np.allclose(sig.ipw.values, expected, atol=1e-12)

    def test_kinds(self):
        ds, nuis = self._fixture()
        sig = cmet_signals(ds, nuis)
        assert sig.outcome.kind == "cmet_outcome"
        assert sig.ipw.kind == "cmet_ipw"
        assert sig.aipw.kind == "cmet_aipw"

    def test_p_x_strictly_inside_unit_interval(self):
        ds, nuis = self._fixture()
        sig = cmet_signals(ds, nuis, alpha=0.05)
        assert np.all(sig.p_x >= 0.05) and np.all(sig.p_x <= 0.95)


class TestMarginalPropensity:
    def test_balanced_design_near_half(self):
        ds = make_binary_ds(n=2000, seed=34, effect=lambda x: np.zeros_like(x))
        p = marginal_propensity(ds)
        assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_tracks_monotone_propensity(self):
        rng = np.random.default_rng(35)
        n = 4000
        x = rng.uniform(-2, 2, n)
        pr = 1.0 / (1.0 + np.exp(-1.5 * x))
        d = (rng.uniform(size=n) < pr).astype(np.float64)
        y = rng.normal(size=n)
        ds = make_dataset(y=y, d=d, x=x, z=np.empty((n, 0)))
        p = marginal_propensity(ds)
        lo = p[ds.x < -1.0].mean()
        hi = p[ds.x > 1.0].mean()
        assert hi - lo > 0.4

    def test_clip_alpha_respected(self):
        ds = make_binary_ds(n=500, seed=36)
        p = marginal_propensity(ds, alpha=0.4)
        assert np.all(p >= 0.4) and np.all(p <= 0.6)


# ---------------------------------------------------------------------------
# Orthogonality diagnostic


class TestGateauxCheck:
    def _true_nuis(self, ds):
        # make_binary_ds truth: Y = 1 + theta(x) d + x + z@1, theta = .5+.25x
        eta = 0.4 * ds.x + 0.4 * ds.z[:, 0]
        base = 1.0 + ds.x + ds.z.sum(axis=1)
        return NuisanceFit(
            kind="binary",
            mu1=base + 0.5 + 0.25 * ds.x,
            mu0=base,
            pi=1.0 / (1.0 + np.exp(-eta)),
        )

    def test_zero_direction_zero_deviation(self):
        ds = make_binary_ds(n=300, seed=37)
        nuis = self._true_nuis(ds)
        zero = {
            "mu1": np.zeros(ds.n),
            "mu0": np.zeros(ds.n),
            "pi": np.zeros(ds.n),
        }
        chk = gateaux_orthogonality_check(ds, nuis, "aipw", directions=zero)
        assert chk.deviation_t == 0.0
        assert chk.deviation_2t == 0.0
        assert chk.ratio == np.inf

    def test_unknown_signal_kind(self):
        ds = make_binary_ds(n=100, seed=38)
        with pytest.raises(ValueError):
            gateaux_orthogonality_check(ds, self._true_nuis(ds), "sdim")

    def test_smoke_fields_and_growth(self):
        ds = make_binary_ds(n=2000, seed=39)
        nuis = self._true_nuis(ds)
        chk = gateaux_orthogonality_check(ds, nuis, "aipw", t=0.2)
        assert chk.t == 0.2
        assert chk.signal_kind == "aipw"
        assert 0.0 < chk.deviation_t < chk.deviation_2t
        assert chk.ratio > 1.0

    def test_outcome_signal_first_order(self):
        # outcome-only signal moves linearly: doubling t doubles the shift
        ds = make_binary_ds(n=2000, seed=40)
        nuis = self._true_nuis(ds)
        chk = gateaux_orthogonality_check(ds, nuis, "outcome", t=0.1)
        assert chk.ratio == pytest.approx(2.0, abs=0.2)
