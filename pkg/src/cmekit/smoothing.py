"""Projection of pseudo-outcome signals onto functions of the moderator.

Three projection methods share one result type:

- ``bspline``: OLS of the signal on a complete cubic B-spline basis in x
  (default df 6: two interior knots at the 1/3 and 2/3 quantiles). Exposes
  the projector state (coefficients, Gram matrix, residuals, per-row
  regressors) needed for sandwich and multiplier inference.
- ``loess``: local linear fit with tricube weights; the neighborhood
  radius is ``span * range(x)``. Pointwise standard errors come from the
  local weighted fit; no global influence representation exists, so
  uniform inference for this route goes through the bootstrap.
- ``discrete``: group means per unique moderator value, numerically equal
  to projection on saturated indicators.

``project_residuals`` runs the same machinery with regressors scaled by
the treatment residual, for the partially linear (continuous treatment)
second stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .dataset import assign_folds
from .numerics import (
    SplineBasis,
    bspline_basis,
    make_spline_basis,
    wls,
    _solve_normal_equations,
)

__all__ = [
    "SmootherSpec",
    "ProjectorFit",
    "project_signal",
    "project_residuals",
    "cv_span",
    "InsufficientLocalData",
]

SPAN_GRID = (0.2, 0.35, 0.5, 0.75, 1.0)


class InsufficientLocalData(ValueError):
    """A local fit window contains fewer than three usable points."""


@dataclass(frozen=True)
class SmootherSpec:
    """Configuration for projecting a signal onto functions of x."""

    method: Literal["bspline", "loess", "discrete"] = "bspline"
    df: int = 6
    degree: int = 3
    span: float | None = None
    span_grid: tuple[float, ...] = SPAN_GRID
    kernel: Literal["tricube", "uniform"] = "tricube"
    cv_folds: int = 10

    def __post_init__(self) -> None:
        if self.method not in ("bspline", "loess", "discrete"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.df < self.degree + 1:
            raise ValueError("df must be at least degree + 1")
        if self.span is not None and not 0.0 < self.span <= 1.0:
            raise ValueError("span must lie in (0, 1]")
        if any(not 0.0 < s <= 1.0 for s in self.span_grid):
            raise ValueError("span grid values must lie in (0, 1]")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")


@dataclass
class ProjectorFit:
    """Fitted projection of a signal onto the moderator.

    For basis methods (``bspline``, ``discrete``, and the residual
    projection), ``beta``, ``gram`` (J = q'q / n), per-row regressors ``q``
    and residuals ``u`` define the influence representation
    ``psi_i(x) = p(x)' J^{-1} q_i u_i`` used by the band constructors.
    ``loess`` fits carry only pointwise values; ``influence_matrix`` raises.
    """

    method: str
    grid: np.ndarray
    theta: np.ndarray
    se: np.ndarray
    n: int
    spec: SmootherSpec
    basis: SplineBasis | None = None
    beta: np.ndarray | None = None
    gram: np.ndarray | None = None
    q: np.ndarray | None = None
    u: np.ndarray | None = None
    levels: np.ndarray | None = None
    span_used: float | None = None
    flags: dict = field(default_factory=dict)

    def basis_rows(self, points: np.ndarray) -> np.ndarray:
        """Regressor rows p(x) at arbitrary x (basis methods only)."""
        points = np.asarray(points, dtype=np.float64).ravel()
        if self.method == "bspline":
            return bspline_basis(points, self.basis)
        if self.method == "discrete":
            rows = np.zeros((len(points), len(self.levels)))
            for j, v in enumerate(self.levels):
                rows[:, j] = points == v
            return rows
        raise InsufficientLocalData(
            "loess fits have no global basis representation"
        )

    def influence_matrix(self, points: np.ndarray | None = None) -> np.ndarray:
        """psi with shape (n, n_points); row i is observation i's influence."""
        if self.q is None:
            raise InsufficientLocalData(
                "influence representation unavailable for loess fits"
            )
        pts = self.grid if points is None else np.asarray(points, np.float64)
        p_eval = self.basis_rows(pts)
        # p(x)' J^{-1} q_i u_i, vectorized over grid points and rows
        jinv_p = _solve_normal_equations(self.gram, p_eval.T, dict(self.flags))
        return (self.q * self.u[:, None]) @ jinv_p

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """theta-hat at arbitrary points (basis methods only)."""
        return self.basis_rows(points) @ self.beta


def _basis_projection(
    signal: np.ndarray,
    q: np.ndarray,
    grid: np.ndarray,
    p_eval: np.ndarray,
    method: str,
    spec: SmootherSpec,
    basis: SplineBasis | None = None,
    levels: np.ndarray | None = None,
) -> ProjectorFit:
    n = len(signal)
    flags: dict = {"ridge_fallback": False}
    gram = q.T @ q / n
    rhs = q.T @ signal / n
    beta = _solve_normal_equations(gram, rhs, flags)
    u = signal - q @ beta
    theta = p_eval @ beta
    # sandwich: se(x)^2 = p'J^-1 Omega J^-1 p / n with Omega = q'diag(u^2)q/n
    jinv_p = _solve_normal_equations(gram, p_eval.T, dict(flags))
    omega = (q * u[:, None] ** 2).T @ q / n
    se = np.sqrt(np.clip(np.einsum("jg,jk,kg->g", jinv_p, omega, jinv_p), 0, None) / n)
    return ProjectorFit(
        method=method,
        grid=grid,
        theta=theta,
        se=se,
        n=n,
        spec=spec,
        basis=basis,
        beta=beta,
        gram=gram,
        q=q,
        u=u,
        levels=levels,
        flags=flags,
    )


def _local_weights(
    x: np.ndarray, x0: float, radius: float, kernel: str
) -> np.ndarray:
    dist = np.abs(x - x0)
    if kernel == "uniform":
        return (dist <= radius).astype(np.float64)
    u = np.minimum(dist / radius, 1.0)
    return (1.0 - u**3) ** 3


def _loess_point(
    signal: np.ndarray,
    x: np.ndarray,
    x0: float,
    radius: float,
    kernel: str,
    d_tilde: np.ndarray | None = None,
) -> tuple[float, float]:
    w = _local_weights(x, x0, kernel=kernel, radius=radius)
    used = w > 0.0
    if int(used.sum()) < 3:
        raise InsufficientLocalData(
            f"fewer than 3 points within radius {radius:.4g} of x0={x0:.4g}"
        )
    centered = x - x0
    if d_tilde is None:
        design = np.column_stack([np.ones(len(x)), centered])
    else:
        design = np.column_stack([d_tilde, centered * d_tilde])
    fit = wls(design[used], signal[used], w[used])
    return float(fit.coef[0]), float(np.sqrt(max(fit.vcov[0, 0], 0.0)))


def _resolve_span(
    signal: np.ndarray,
    x: np.ndarray,
    spec: SmootherSpec,
    seed: int,
    d_tilde: np.ndarray | None = None,
) -> float:
    if spec.span is not None:
        return spec.span
    return cv_span(signal, x, spec, seed=seed, d_tilde=d_tilde)


def project_signal(
    signal: np.ndarray,
    x: np.ndarray,
    spec: SmootherSpec,
    grid: np.ndarray | None = None,
    seed: int = 0,
    basis: SplineBasis | None = None,
) -> ProjectorFit:
    """Project a per-observation signal onto functions of the moderator.

    The default grid is 50 equally spaced points over the range of x
    (``discrete`` ignores it and uses the sorted unique values).
    Passing ``basis`` pins the spline knots (bootstrap replications reuse
    the original fit's basis instead of re-deriving knots from resampled
    data).
    """
    signal = np.asarray(signal, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if len(signal) != len(x):
        raise ValueError("signal and x lengths differ")
    if grid is None and spec.method != "discrete":
        grid = np.linspace(x.min(), x.max(), 50)
    if spec.method == "bspline":
        if basis is None:
            basis = make_spline_basis(x, degree=spec.degree, df=spec.df)
        q = bspline_basis(x, basis)
        p_eval = bspline_basis(grid, basis)
        return _basis_projection(signal, q, grid, p_eval, "bspline", spec, basis=basis)
    if spec.method == "discrete":
        levels = np.unique(x)
        grid = levels
        q = np.zeros((len(x), len(levels)))
        for j, v in enumerate(levels):
            q[:, j] = x == v
        return _basis_projection(
            signal, q, grid, np.eye(len(levels)), "discrete", spec, levels=levels
        )
    span = _resolve_span(signal, x, spec, seed)
    radius = span * (x.max() - x.min())
    theta = np.empty(len(grid))
    se = np.empty(len(grid))
    for g, x0 in enumerate(grid):
        theta[g], se[g] = _loess_point(signal, x, float(x0), radius, spec.kernel)
    return ProjectorFit(
        method="loess",
        grid=np.asarray(grid, dtype=np.float64),
        theta=theta,
        se=se,
        n=len(x),
        spec=spec,
        span_used=span,
    )


def project_residuals(
    y_tilde: np.ndarray,
    d_tilde: np.ndarray,
    x: np.ndarray,
    spec: SmootherSpec,
    grid: np.ndarray | None = None,
    seed: int = 0,
    basis: SplineBasis | None = None,
) -> ProjectorFit:
    """Second stage of the partially linear route.

    Solves ``min_b sum_i (y_tilde_i - d_tilde_i * p(x_i)'b)^2``; the
    effect curve is ``p(x)'b``. With loess, each local fit regresses
    ``y_tilde`` on ``{d_tilde, (x - x0) d_tilde}``. ``basis`` pins the
    spline knots, as in :func:`project_signal`.
    """
    y_tilde = np.asarray(y_tilde, dtype=np.float64).ravel()
    d_tilde = np.asarray(d_tilde, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if not len(y_tilde) == len(d_tilde) == len(x):
        raise ValueError("y_tilde, d_tilde, and x lengths differ")
    if grid is None and spec.method != "discrete":
        grid = np.linspace(x.min(), x.max(), 50)
    if spec.method == "bspline":
        if basis is None:
            basis = make_spline_basis(x, degree=spec.degree, df=spec.df)
        q = bspline_basis(x, basis) * d_tilde[:, None]
        p_eval = bspline_basis(grid, basis)
        return _basis_projection(
            y_tilde, q, grid, p_eval, "bspline", spec, basis=basis
        )
    if spec.method == "discrete":
        levels = np.unique(x)
        q = np.zeros((len(x), len(levels)))
        for j, v in enumerate(levels):
            q[:, j] = (x == v) * d_tilde
        return _basis_projection(
            y_tilde, q, levels, np.eye(len(levels)), "discrete", spec, levels=levels
        )
    span = _resolve_span(y_tilde, x, spec, seed, d_tilde=d_tilde)
    radius = span * (x.max() - x.min())
    theta = np.empty(len(grid))
    se = np.empty(len(grid))
    for g, x0 in enumerate(grid):
        theta[g], se[g] = _loess_point(
            y_tilde, x, float(x0), radius, spec.kernel, d_tilde=d_tilde
        )
    return ProjectorFit(
        method="loess",
        grid=np.asarray(grid, dtype=np.float64),
        theta=theta,
        se=se,
        n=len(x),
        spec=spec,
        span_used=span,
    )


def cv_span(
    signal: np.ndarray,
    x: np.ndarray,
    spec: SmootherSpec,
    seed: int = 0,
    d_tilde: np.ndarray | None = None,
) -> float:
    """Pick the span from ``spec.span_grid`` by k-fold prediction error.

    A held-out point whose window lacks three training points contributes
    an infinite loss, disqualifying that span. Ties go to the smaller span.
    """
    signal = np.asarray(signal, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    n = len(x)
    folds = assign_folds(n, min(spec.cv_folds, n), seed)
    spans = sorted(spec.span_grid)
    losses = np.zeros(len(spans))
    for s_idx, span in enumerate(spans):
        radius = span * (x.max() - x.min())
        total = 0.0
        for k in range(folds.k):
            tr = folds.train_rows(k)
            te = folds.test_rows(k)
            for i in te:
                try:
                    local, _ = _loess_point(
                        signal[tr],
                        x[tr],
                        float(x[i]),
                        radius,
                        spec.kernel,
                        d_tilde=None if d_tilde is None else d_tilde[tr],
                    )
                except InsufficientLocalData:
                    total = np.inf
                    break
                pred = local if d_tilde is None else local * d_tilde[i]
                total += (signal[i] - pred) ** 2
            if not np.isfinite(total):
                break
        losses[s_idx] = total
    if not np.any(np.isfinite(losses)):
        raise InsufficientLocalData("no span in the grid supports a local fit")
    best = int(np.flatnonzero(losses == losses.min())[0])
    return spans[best]
