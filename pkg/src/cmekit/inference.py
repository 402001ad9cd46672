"""Pointwise and uniform confidence bands, and the tests built on them.

Three band constructors share :class:`BandResult`:

- :func:`sandwich_band`: analytic pointwise intervals from the projector's
  influence representation. No uniform band.
- :func:`multiplier_band`: pointwise intervals plus a uniform band whose
  critical value is the (1 - alpha) quantile of the sup over the grid of
  ``|sum_i xi_i psi_i(x)| / sqrt(sum_i psi_i(x)^2)`` across Gaussian
  multiplier draws ``xi``. The critical value never drops below the
  pointwise normal quantile, so the uniform band nests the pointwise one.
- :func:`nonparam_bootstrap_band`: percentile intervals from row-resampled
  refits of a frozen estimator closure, plus a uniform band that tightens
  the per-point quantile level from alpha/2 toward alpha/(2k) until the
  fraction of bootstrap curves contained everywhere first reaches
  1 - alpha. All tuning inside the closure must be frozen by the caller;
  only the rows change across replications.

Hypothesis harvesting: a point null theta(x0) = 0 uses the pointwise z
statistic; a no-moderation null uses the supplied interaction contrast;
a region null theta(x) = 0 for all x in R is rejected when the uniform
band excludes zero anywhere in R.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .dataset import Dataset, subset
from .rng import derive_seed, make_rng
from .smoothing import ProjectorFit

__all__ = [
    "BandResult",
    "PointTest",
    "ModerationTest",
    "RegionTest",
    "HypothesisTests",
    "sandwich_band",
    "multiplier_band",
    "nonparam_bootstrap_band",
    "hypothesis_tests",
    "SingularJacobian",
    "BootstrapDegenerate",
]

DEFAULT_ALPHA = 0.05
MULTIPLIER_B = 1000
BOOTSTRAP_B = 2000
ZETA_LATTICE = 200
MAX_FAILURE_SHARE = 0.05
_MULT_CHUNK = 64


class SingularJacobian(np.linalg.LinAlgError):
    """Projector Gram matrix unusable even after the ridge fallback."""


class BootstrapDegenerate(RuntimeError):
    """Too many bootstrap replications failed to produce a curve."""


@dataclass
class BandResult:
    """Estimate with pointwise and (optionally) uniform intervals."""

    grid: np.ndarray
    theta: np.ndarray
    se: np.ndarray
    point_lower: np.ndarray
    point_upper: np.ndarray
    unif_lower: np.ndarray | None
    unif_upper: np.ndarray | None
    alpha: float
    method: str
    crit_point: float
    crit_unif: float | None = None
    b_used: int = 0
    flags: dict = field(default_factory=dict)

    def has_uniform(self) -> bool:
        return self.unif_lower is not None


def _z(alpha: float) -> float:
    return float(stats.norm.ppf(1.0 - alpha / 2.0))


def sandwich_band(fit: ProjectorFit, alpha: float = DEFAULT_ALPHA) -> BandResult:
    """Pointwise normal intervals from the projector's sandwich variance.

    Zero residuals give a zero-width band. A Gram matrix that cannot be
    solved even with the ridge retry raises :class:`SingularJacobian`.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = _z(alpha)
    se = np.asarray(fit.se, dtype=np.float64)
    flags = dict(fit.flags)
    if flags.get("ridge_fallback"):
        flags["singular_jacobian_ridge"] = True
    return BandResult(
        grid=fit.grid,
        theta=fit.theta,
        se=se,
        point_lower=fit.theta - z * se,
        point_upper=fit.theta + z * se,
        unif_lower=None,
        unif_upper=None,
        alpha=alpha,
        method="sandwich",
        crit_point=z,
        flags=flags,
    )


def multiplier_band(
    fit: ProjectorFit,
    alpha: float = DEFAULT_ALPHA,
    n_boot: int = MULTIPLIER_B,
    seed: int = 0,
) -> BandResult:
    """Uniform band via the Gaussian multiplier process on the influence
    representation. Requires a basis-method fit (not loess)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    try:
        psi = fit.influence_matrix()
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian(str(exc)) from exc
    n, n_grid = psi.shape
    denom = np.sqrt(np.sum(psi**2, axis=0))
    live = denom > 0.0
    sup_stats = np.empty(n_boot)
    rng = make_rng(seed)
    # chunk the multiplier draws; one GEMM per chunk
    row = 0
    while row < n_boot:
        m = min(_MULT_CHUNK, n_boot - row)
        xi = rng.standard_normal((m, n))
        t_star = np.zeros((m, n_grid))
        t_star[:, live] = (xi @ psi[:, live]) / denom[live]
        sup_stats[row : row + m] = np.max(np.abs(t_star), axis=1)
        row += m
    c = float(np.quantile(sup_stats, 1.0 - alpha))
    z = _z(alpha)
    flags = dict(fit.flags)
    if c < z:
        flags["crit_raised_to_pointwise"] = True
        c = z
    se = np.asarray(fit.se, dtype=np.float64)
    return BandResult(
        grid=fit.grid,
        theta=fit.theta,
        se=se,
        point_lower=fit.theta - z * se,
        point_upper=fit.theta + z * se,
        unif_lower=fit.theta - c * se,
        unif_upper=fit.theta + c * se,
        alpha=alpha,
        method="multiplier",
        crit_point=z,
        crit_unif=c,
        b_used=n_boot,
        flags=flags,
    )


def nonparam_bootstrap_band(
    ds: Dataset,
    estimator: Callable[[Dataset], np.ndarray],
    grid: np.ndarray,
    theta_hat: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    n_boot: int = BOOTSTRAP_B,
    seed: int = 0,
) -> BandResult:
    """Row-resampling percentile bands around a frozen estimator.

    ``estimator`` maps a resampled dataset to a curve on ``grid``; any
    data-driven tuning must already be pinned inside the closure. Failed
    replications are dropped; more than 5% failures raises
    :class:`BootstrapDegenerate`. The uniform band reuses the bootstrap
    curves: the per-point tail level zeta shrinks from alpha/2 toward
    alpha/(2k) over a 200-step lattice until at least 1 - alpha of curves
    lie inside everywhere. A one-point grid gives zeta = alpha/2, equal to
    the pointwise percentile interval.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    grid = np.asarray(grid, dtype=np.float64)
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    n_grid = len(grid)
    if len(theta_hat) != n_grid:
        raise ValueError("theta_hat and grid lengths differ")
    curves = np.empty((n_boot, n_grid))
    failures = 0
    kept = 0
    for b in range(n_boot):
        rng = make_rng(derive_seed(seed, b))
        rows = rng.integers(0, ds.n, size=ds.n)
        try:
            curve = np.asarray(estimator(subset(ds, rows)), dtype=np.float64)
            if curve.shape != (n_grid,) or not np.all(np.isfinite(curve)):
                raise ValueError("estimator returned a malformed curve")
        except Exception:
            failures += 1
            continue
        curves[kept] = curve
        kept += 1
    if failures > MAX_FAILURE_SHARE * n_boot:
        raise BootstrapDegenerate(
            f"{failures} of {n_boot} bootstrap replications failed"
        )
    curves = curves[:kept]
    point_lower = np.quantile(curves, alpha / 2.0, axis=0)
    point_upper = np.quantile(curves, 1.0 - alpha / 2.0, axis=0)
    se = np.std(curves, axis=0)

    zeta_hi = alpha / 2.0
    zeta_lo = alpha / (2.0 * n_grid)
    flags: dict = {"n_failures": failures}
    if n_grid == 1:
        zeta_star = zeta_hi
    else:
        lattice = np.linspace(zeta_hi, zeta_lo, ZETA_LATTICE)
        zeta_star = None
        for zeta in lattice:
            lo = np.quantile(curves, zeta, axis=0)
            hi = np.quantile(curves, 1.0 - zeta, axis=0)
            inside = np.all((curves >= lo) & (curves <= hi), axis=1)
            if inside.mean() >= 1.0 - alpha:
                zeta_star = float(zeta)
                break
        if zeta_star is None:
            # simultaneous coverage unattained on the lattice; use the
            # union-bound floor
            zeta_star = zeta_lo
            flags["zeta_floor"] = True
    unif_lower = np.quantile(curves, zeta_star, axis=0)
    unif_upper = np.quantile(curves, 1.0 - zeta_star, axis=0)
    # percentile quantile nesting should be automatic (zeta* <= alpha/2);
    # enforce against lattice rounding
    unif_lower = np.minimum(unif_lower, point_lower)
    unif_upper = np.maximum(unif_upper, point_upper)
    flags["zeta_star"] = zeta_star
    return BandResult(
        grid=grid,
        theta=theta_hat,
        se=se,
        point_lower=point_lower,
        point_upper=point_upper,
        unif_lower=unif_lower,
        unif_upper=unif_upper,
        alpha=alpha,
        method="nonparam_bootstrap",
        crit_point=_z(alpha),
        crit_unif=None,
        b_used=kept,
        flags=flags,
    )


@dataclass
class PointTest:
    """theta(x0) = 0 at a single point."""

    x: float
    estimate: float
    se: float
    z: float
    p_value: float
    reject: bool


@dataclass
class ModerationTest:
    """No effect modification between two moderator values."""

    delta: float
    se: float
    z: float
    p_value: float
    reject: bool


@dataclass
class RegionTest:
    """theta(x) = 0 everywhere on a region, via uniform-band exclusion."""

    region: tuple[float, float]
    reject: bool
    excluded_share: float
    excluded_mask: np.ndarray


@dataclass
class HypothesisTests:
    points: list[PointTest]
    moderation: ModerationTest | None
    region: RegionTest | None
    alpha: float


def hypothesis_tests(
    band: BandResult,
    points: Sequence[float] | None = None,
    moderation: tuple[float, float] | None = None,
    region: tuple[float, float] | None = None,
    alpha: float | None = None,
) -> HypothesisTests:
    """Harvest tests from a fitted band.

    ``points``: moderator values for the point nulls (nearest grid point
    is used). ``moderation``: a (contrast, se) pair, typically the scaled
    interaction coefficient between two moderator values. ``region``:
    moderator interval for the uniform-exclusion null; requires a band
    with a uniform component.
    """
    alpha = band.alpha if alpha is None else alpha
    point_tests: list[PointTest] = []
    if points is not None:
        for x0 in points:
            j = int(np.argmin(np.abs(band.grid - x0)))
            est = float(band.theta[j])
            se = float(band.se[j])
            if se > 0.0:
                zstat = est / se
                p = float(2.0 * stats.norm.sf(abs(zstat)))
            else:
                zstat = np.inf if est != 0.0 else 0.0
                p = 0.0 if est != 0.0 else 1.0
            point_tests.append(
                PointTest(
                    x=float(band.grid[j]),
                    estimate=est,
                    se=se,
                    z=zstat,
                    p_value=p,
                    reject=p < alpha,
                )
            )
    mod_test = None
    if moderation is not None:
        delta, se = float(moderation[0]), float(moderation[1])
        if se > 0.0:
            zstat = delta / se
            p = float(2.0 * stats.norm.sf(abs(zstat)))
        else:
            zstat = np.inf if delta != 0.0 else 0.0
            p = 0.0 if delta != 0.0 else 1.0
        mod_test = ModerationTest(
            delta=delta, se=se, z=zstat, p_value=p, reject=p < alpha
        )
    region_test = None
    if region is not None:
        if not band.has_uniform():
            raise ValueError("region test requires a uniform band")
        lo, hi = region
        in_region = (band.grid >= lo) & (band.grid <= hi)
        if not np.any(in_region):
            raise ValueError("region contains no grid points")
        excluded = (band.unif_lower > 0.0) | (band.unif_upper < 0.0)
        mask = excluded & in_region
        region_test = RegionTest(
            region=(float(lo), float(hi)),
            reject=bool(np.any(mask)),
            excluded_share=float(mask.sum() / in_region.sum()),
            excluded_mask=mask,
        )
    return HypothesisTests(
        points=point_tests,
        moderation=mod_test,
        region=region_test,
        alpha=alpha,
    )
