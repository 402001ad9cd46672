"""Classic effect-curve estimators: linear interaction, binning, kernel.

All three regress the outcome on treatment-by-moderator terms directly:

- :func:`linear_cme`: OLS of Y on {1, D, X, DX, Z}; the curve is
  ``b_D + b_DX * x`` with HC1 variance ``V[b_D] + x^2 V[b_DX] + 2x Cov``.
- :func:`binning_cme`: equal-count moderator bins, each with its own
  intercept, treatment effect, slope, and slope-by-treatment term, plus a
  shared additive covariate block. Bins without treatment variation are
  flagged non-identified and their treatment columns dropped.
- :func:`kernel_cme`: a weighted local regression at each grid point with
  Gaussian weights and a density-adaptive bandwidth
  ``h(x0) = h0 * sqrt(gm / rho(x0))`` (rho: KDE of the moderator, gm: its
  geometric mean over the sample), so sparse regions borrow more. The
  pilot scale h0 is chosen by 10-fold prediction error over 20 log-spaced
  values spanning [0.05, 2] times the moderator range.

Analytic intervals here are pointwise; uniform bands for these estimators
come from the nonparametric bootstrap (see the inference module).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, assign_folds
from .inference import ModerationTest
from .numerics import LinearFit, kde_gaussian, wls
from scipy import stats

__all__ = [
    "CmeCurve",
    "LinearCmeResult",
    "BinningResult",
    "linear_cme",
    "effect_modification",
    "binning_cme",
    "kernel_cme",
    "EmptyBin",
    "EffectiveSampleTooSmall",
    "default_grid",
    "attach_bands",
]

DEFAULT_GRID_SIZE = 50
H0_GRID_SIZE = 20
H0_RANGE = (0.05, 2.0)
KERNEL_CV_FOLDS = 10


class EmptyBin(ValueError):
    """A moderator bin contains no observations."""


class EffectiveSampleTooSmall(UserWarning):
    """A local fit's total kernel weight is below twice its column count."""


def default_grid(x: np.ndarray, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    return np.linspace(float(np.min(x)), float(np.max(x)), size)


@dataclass
class CmeCurve:
    """An effect curve on a moderator grid with pointwise intervals and,
    when a bootstrap or multiplier band has been attached, uniform ones.

    ``se`` entries may be ``inf`` (with a flag) where a local fit had too
    little effective sample; they are never negative. When both interval
    types are present the uniform band contains the pointwise band.
    """

    grid: np.ndarray
    theta: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    method: str
    n: int
    alpha: float
    uci_lower: np.ndarray | None = None
    uci_upper: np.ndarray | None = None
    flags: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if len(self.grid) > 1 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")
        finite = np.isfinite(self.se)
        if np.any(self.se[finite] < 0):
            raise ValueError("standard errors must be nonnegative")
        fields_ = [self.theta, self.se, self.ci_lower, self.ci_upper]
        if self.uci_lower is not None:
            fields_ += [self.uci_lower, self.uci_upper]
        if any(len(f) != len(self.grid) for f in fields_):
            raise ValueError("curve arrays must match the grid length")
        if self.uci_lower is not None:
            ok = np.isfinite(self.ci_lower) & np.isfinite(self.uci_lower)
            if np.any(self.uci_lower[ok] > self.ci_lower[ok] + 1e-12) or np.any(
                self.uci_upper[ok] < self.ci_upper[ok] - 1e-12
            ):
                raise ValueError("uniform band must contain the pointwise band")


def attach_bands(curve: CmeCurve, unif_lower: np.ndarray, unif_upper: np.ndarray) -> CmeCurve:
    """Attach a uniform band, widening it to contain the pointwise band.

    Widening only triggers when the band sources disagree (e.g. analytic
    pointwise vs bootstrap uniform); the flag records that it happened.
    """
    lo = np.asarray(unif_lower, dtype=np.float64)
    hi = np.asarray(unif_upper, dtype=np.float64)
    widened = bool(
        np.any(lo > curve.ci_lower + 1e-12) or np.any(hi < curve.ci_upper - 1e-12)
    )
    curve.uci_lower = np.minimum(lo, curve.ci_lower)
    curve.uci_upper = np.maximum(hi, curve.ci_upper)
    if widened:
        curve.flags["uniform_band_widened"] = True
    return curve


def _pointwise_ci(theta: np.ndarray, se: np.ndarray, alpha: float):
    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    return theta - z * se, theta + z * se


# ---------------------------------------------------------------------------
# Linear interaction


@dataclass
class LinearCmeResult:
    """Linear-interaction fit: the curve plus the coefficients behind it."""

    curve: CmeCurve
    fit: LinearFit
    coef_names: list[str]
    b_d: float
    b_dx: float
    var_d: float
    var_dx: float
    cov_d_dx: float


def linear_cme(
    ds: Dataset, grid: np.ndarray | None = None, alpha: float = 0.05
) -> LinearCmeResult:
    """OLS of Y on {1, D, X, DX, Z} with an HC1 linear-combination band."""
    if grid is None:
        grid = default_grid(ds.x)
    grid = np.asarray(grid, dtype=np.float64)
    design = np.column_stack([np.ones(ds.n), ds.d, ds.x, ds.d * ds.x, ds.z])
    names = ["const", "d", "x", "d:x"] + [f"z{j + 1}" for j in range(ds.p)]
    fit = wls(design, ds.y)
    b_d, b_dx = float(fit.coef[1]), float(fit.coef[3])
    v_d, v_dx = float(fit.vcov[1, 1]), float(fit.vcov[3, 3])
    c_ddx = float(fit.vcov[1, 3])
    theta = b_d + b_dx * grid
    var = v_d + grid**2 * v_dx + 2.0 * grid * c_ddx
    se = np.sqrt(np.clip(var, 0.0, None))
    lo, hi = _pointwise_ci(theta, se, alpha)
    flags: dict = dict(fit.flags)
    if np.any(grid < ds.x.min() - 1e-12) or np.any(grid > ds.x.max() + 1e-12):
        flags["extrapolated_grid"] = True
    curve = CmeCurve(
        grid=grid,
        theta=theta,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        method="linear",
        n=ds.n,
        alpha=alpha,
        flags=flags,
    )
    return LinearCmeResult(
        curve=curve,
        fit=fit,
        coef_names=names,
        b_d=b_d,
        b_dx=b_dx,
        var_d=v_d,
        var_dx=v_dx,
        cov_d_dx=c_ddx,
    )


def effect_modification(
    result: LinearCmeResult, x1: float, x2: float, alpha: float = 0.05
) -> ModerationTest:
    """Test theta(x1) - theta(x2) = 0; under the linear model this contrast
    is ``b_dx * (x1 - x2)`` with variance ``V[b_dx] * (x1 - x2)^2``."""
    diff = x1 - x2
    delta = result.b_dx * diff
    se = float(np.sqrt(max(result.var_dx, 0.0)) * abs(diff))
    if se > 0.0:
        z = delta / se
        p = float(2.0 * stats.norm.sf(abs(z)))
    else:
        z = np.inf if delta != 0.0 else 0.0
        p = 0.0 if delta != 0.0 else 1.0
    return ModerationTest(delta=float(delta), se=se, z=z, p_value=p, reject=p < alpha)


# ---------------------------------------------------------------------------
# Binning


@dataclass
class BinningResult:
    """Per-bin treatment effects with bin bookkeeping."""

    curve: CmeCurve
    edges: np.ndarray
    eval_points: np.ndarray
    counts: np.ndarray
    counts_treated: np.ndarray
    non_identified: np.ndarray
    fit: LinearFit


def binning_cme(
    ds: Dataset,
    n_bins: int = 3,
    eval_rule: str = "median",
    alpha: float = 0.05,
    cutoffs: np.ndarray | None = None,
) -> BinningResult:
    """Equal-count moderator bins, jointly fitted in one regression.

    Each bin j contributes {G_j, G_j D, G_j (X - x_j), G_j (X - x_j) D}
    with x_j the bin's evaluation point (within-bin median, or the edge
    midpoint under ``eval_rule="midpoint"``); covariates enter additively.
    The effect at x_j is the coefficient on G_j D. A bin whose rows are
    all treated or all control keeps its other terms but drops both
    treatment columns; its effect is reported as NaN with a flag.

    ``cutoffs`` replaces the equal-count rule with explicit interior cut
    points (strictly increasing, inside the observed moderator range);
    ``n_bins`` is then ignored.
    """
    if eval_rule not in ("median", "midpoint"):
        raise ValueError(f"unknown eval_rule {eval_rule!r}")
    if cutoffs is not None:
        inner = np.asarray(cutoffs, dtype=np.float64).ravel()
        if len(inner) and not np.all(np.diff(inner) > 0):
            raise ValueError("cutoffs must be strictly increasing")
        xmin, xmax = float(ds.x.min()), float(ds.x.max())
        if len(inner) and (inner[0] <= xmin or inner[-1] >= xmax):
            raise ValueError("cutoffs must lie strictly inside the moderator range")
        edges = np.concatenate([[xmin], inner, [xmax]])
        n_bins = len(edges) - 1
    else:
        if n_bins < 1:
            raise ValueError("n_bins must be at least 1")
        probs = np.arange(n_bins + 1) / n_bins
        edges = np.quantile(ds.x, probs)
    # half-open bins, last bin closed on the right
    which = np.clip(np.searchsorted(edges[1:-1], ds.x, side="right"), 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise EmptyBin(
            f"bin {empty} (edges {edges[empty]:.4g}..{edges[empty + 1]:.4g}) is empty"
        )
    eval_points = np.empty(n_bins)
    for j in range(n_bins):
        rows = which == j
        eval_points[j] = (
            float(np.median(ds.x[rows]))
            if eval_rule == "median"
            else float((edges[j] + edges[j + 1]) / 2.0)
        )
    non_identified = np.zeros(n_bins, dtype=bool)
    counts_treated = np.zeros(n_bins, dtype=np.int64)
    columns: list[np.ndarray] = []
    effect_col: dict[int, int] = {}
    for j in range(n_bins):
        g = (which == j).astype(np.float64)
        centered = (ds.x - eval_points[j]) * g
        d_var = np.unique(ds.d[which == j])
        counts_treated[j] = int(np.sum(ds.d[which == j] == 1.0))
        columns.append(g)
        if len(d_var) < 2:
            non_identified[j] = True
            columns.append(centered)
        else:
            effect_col[j] = len(columns)
            columns.append(g * ds.d)
            columns.append(centered)
            columns.append(centered * ds.d)
    design = np.column_stack(columns + [ds.z]) if ds.p else np.column_stack(columns)
    fit = wls(design, ds.y)
    theta = np.full(n_bins, np.nan)
    se = np.full(n_bins, np.nan)
    for j, col in effect_col.items():
        theta[j] = fit.coef[col]
        se[j] = np.sqrt(max(fit.vcov[col, col], 0.0))
    lo, hi = _pointwise_ci(theta, se, alpha)
    flags: dict = dict(fit.flags)
    if np.any(non_identified):
        flags["non_identified_bins"] = [int(j) for j in np.flatnonzero(non_identified)]
    curve = CmeCurve(
        grid=eval_points,
        theta=theta,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        method="binning",
        n=ds.n,
        alpha=alpha,
        flags=flags,
        extras={"edges": edges, "n_bins": n_bins, "eval_rule": eval_rule},
    )
    return BinningResult(
        curve=curve,
        edges=edges,
        eval_points=eval_points,
        counts=counts,
        counts_treated=counts_treated,
        non_identified=non_identified,
        fit=fit,
    )


# ---------------------------------------------------------------------------
# Kernel (local regression)


def _adaptive_ratio(x: np.ndarray) -> tuple[np.ndarray, float]:
    """sqrt(gm / rho(x_i)) per sample point and the geometric-mean density."""
    rho = kde_gaussian(x, x)
    gm = float(np.exp(np.mean(np.log(rho))))
    return np.sqrt(gm / rho), gm


def _local_design(
    d: np.ndarray, z: np.ndarray, delta: np.ndarray
) -> np.ndarray:
    base = np.column_stack([np.ones(len(d)), d, z])
    return np.column_stack([base, base * delta[:, None]])


def _cv_h0(ds: Dataset, ratio: np.ndarray, seed: int) -> tuple[float, np.ndarray]:
    """Pick the pilot scale by 10-fold held-out outcome prediction error."""
    span = float(ds.x.max() - ds.x.min())
    h0_grid = np.geomspace(H0_RANGE[0] * span, H0_RANGE[1] * span, H0_GRID_SIZE)
    folds = assign_folds(ds.n, min(KERNEL_CV_FOLDS, ds.n), seed)
    base_all = np.column_stack([np.ones(ds.n), ds.d, ds.z])
    m0 = base_all.shape[1]
    m = 2 * m0
    losses = np.zeros(H0_GRID_SIZE)
    for k in range(folds.k):
        tr = folds.train_rows(k)
        te = folds.test_rows(k)
        delta = ds.x[tr][None, :] - ds.x[te][:, None]
        # (delta / per-point shape)^2, reused across the h0 grid
        v = (delta / ratio[te][:, None]) ** 2
        base_tr = base_all[tr]
        p0 = (base_tr[:, :, None] * base_tr[:, None, :]).reshape(len(tr), m0 * m0)
        y_tr = ds.y[tr]
        for hi, h0 in enumerate(h0_grid):
            w = np.exp(-v / (2.0 * h0 * h0))
            wd = w * delta
            wdd = wd * delta
            a = np.empty((len(te), m, m))
            a00 = (w @ p0).reshape(-1, m0, m0)
            a01 = (wd @ p0).reshape(-1, m0, m0)
            a11 = (wdd @ p0).reshape(-1, m0, m0)
            a[:, :m0, :m0] = a00
            a[:, :m0, m0:] = a01
            a[:, m0:, :m0] = a01
            a[:, m0:, m0:] = a11
            rhs = np.empty((len(te), m))
            rhs[:, :m0] = (w * y_tr) @ base_tr
            rhs[:, m0:] = (wd * y_tr) @ base_tr
            # per-point ridge keeps the batched solve nonsingular
            tr_a = np.trace(a, axis1=1, axis2=2)
            idx = np.arange(m)
            a[:, idx, idx] += (1e-10 * tr_a / m + 1e-300)[:, None]
            try:
                coefs = np.linalg.solve(a, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                losses[hi] = np.inf
                continue
            # at the evaluation point delta = 0: prediction uses base only
            pred = np.einsum("ij,ij->i", base_all[te], coefs[:, :m0])
            losses[hi] += float(np.sum((ds.y[te] - pred) ** 2))
    best = int(np.argmin(losses))
    return float(h0_grid[best]), losses


def kernel_cme(
    ds: Dataset,
    grid: np.ndarray | None = None,
    h0: float | None = None,
    alpha: float = 0.05,
    fully_moderated: bool = True,
    seed: int = 0,
) -> CmeCurve:
    """Local regression effect curve with density-adaptive Gaussian weights.

    At each grid point x0 the regressors are {1, D, X - x0, D (X - x0)}
    plus Z and, when ``fully_moderated``, Z (X - x0); the effect is the
    coefficient on D. Weights are ``exp(-((X - x0) / h(x0))^2 / 2)``. A
    grid point whose total weight falls below twice the column count gets
    an infinite standard error and a flag instead of an error.
    """
    if grid is None:
        grid = default_grid(ds.x)
    grid = np.asarray(grid, dtype=np.float64)
    ratio_sample, gm = _adaptive_ratio(ds.x)
    if h0 is None:
        h0, _ = _cv_h0(ds, ratio_sample, seed)
    rho_grid = kde_gaussian(ds.x, grid)
    h_grid = h0 * np.sqrt(gm / rho_grid)
    theta = np.full(len(grid), np.nan)
    se = np.full(len(grid), np.nan)
    small = np.zeros(len(grid), dtype=bool)
    for g, x0 in enumerate(grid):
        delta = ds.x - x0
        w = np.exp(-((delta / h_grid[g]) ** 2) / 2.0)
        if fully_moderated:
            design = _local_design(ds.d, ds.z, delta)
        else:
            base = np.column_stack([np.ones(ds.n), ds.d, ds.z])
            design = np.column_stack([base, delta, ds.d * delta])
        if w.sum() < 2.0 * design.shape[1]:
            small[g] = True
            se[g] = np.inf
            continue
        fit = wls(design, ds.y, w)
        theta[g] = fit.coef[1]
        se[g] = np.sqrt(max(fit.vcov[1, 1], 0.0))
    lo, hi = _pointwise_ci(theta, se, alpha)
    flags: dict = {}
    if np.any(small):
        flags["effective_sample_too_small"] = [int(j) for j in np.flatnonzero(small)]
        warnings.warn(
            f"{int(small.sum())} grid point(s) had too little kernel weight; "
            "their standard errors are infinite",
            EffectiveSampleTooSmall,
            stacklevel=2,
        )
    return CmeCurve(
        grid=grid,
        theta=theta,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        method="kernel",
        n=ds.n,
        alpha=alpha,
        flags=flags,
        extras={"h0": h0, "h_grid": h_grid, "fully_moderated": fully_moderated},
    )
