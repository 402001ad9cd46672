"""Deterministic numerical kernels.

Weighted least squares with HC1 robust covariance, logistic regression via
iteratively reweighted least squares, coordinate-descent Lasso (gaussian and
binomial) with cross-validated penalty selection and post-selection refits,
Cox-de Boor B-spline bases, basis expansion of covariate matrices, and
Gaussian kernel density estimation.

Conventions fixed here and used package-wide:

- Robust covariance is Eicker-Huber-White HC1 (factor n/(n-m)).
- Lasso designs are centered and scaled to unit variance internally; the
  intercept is never penalized; reported coefficients are on the original
  scale. The penalty grid is 100 log-spaced values from lambda_max down to
  1e-3*lambda_max.
- Singular normal equations get one ridge retry (1e-10 * trace/dim) and a
  ``ridge_fallback`` flag; only then is :class:`SingularDesign` raised.
- B-spline bases are complete (intercept-inclusive): ``df`` columns equal
  the number of interior knots plus degree plus one, and rows sum to one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numba import njit

from .dataset import Dataset, assign_folds

__all__ = [
    "LinearFit",
    "LassoPath",
    "SplineBasis",
    "DesignMatrix",
    "wls",
    "logit_irls",
    "lasso_cd",
    "post_selection_refit",
    "bspline_basis",
    "make_spline_basis",
    "expand_design",
    "kde_gaussian",
    "SingularDesign",
    "NonConvergence",
    "DegenerateSample",
    "SeparationDetected",
]

LASSO_TOL = 1e-7
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
SEPARATION_BOUND = 30.0
RIDGE_EPS = 1e-10
N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-3


class SingularDesign(np.linalg.LinAlgError):
    """Normal equations unsolvable even after the ridge fallback."""


class NonConvergence(RuntimeError):
    """Iterative fit hit its iteration cap without meeting tolerance."""


class DegenerateSample(ValueError):
    """Sample carries no usable variation (e.g. zero spread for a KDE)."""


class SeparationDetected(UserWarning):
    """Logistic fit diverged (|coef| > 30); coefficients were clipped."""


# ---------------------------------------------------------------------------
# Linear fits


@dataclass
class LinearFit:
    """Result of a (weighted) linear or logistic fit.

    ``coef`` aligns with the design matrix passed to the fitting routine
    (for :func:`post_selection_refit`, entry 0 is the intercept and the
    remaining entries align with the raw feature columns, zeros off the
    selected set). ``vcov`` is HC1 for least squares and the inverse
    observed information for logistic fits.
    """

    coef: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    selected: tuple[int, ...] | None = None
    flags: dict = field(default_factory=dict)

    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))


def _solve_normal_equations(
    a: np.ndarray, rhs: np.ndarray, flags: dict
) -> np.ndarray:
    """Solve ``a @ beta = rhs`` with a single ridge retry on failure."""
    m = a.shape[0]
    try:
        beta = np.linalg.solve(a, rhs)
        if np.all(np.isfinite(beta)):
            return beta
    except np.linalg.LinAlgError:
        pass
    ridge = RIDGE_EPS * np.trace(a) / m
    if not np.isfinite(ridge) or ridge <= 0.0:
        raise SingularDesign("normal equations singular with zero trace")
    try:
        beta = np.linalg.solve(a + ridge * np.eye(m), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("ridge fallback failed") from exc
    if not np.all(np.isfinite(beta)):
        raise SingularDesign("ridge fallback produced non-finite solution")
    flags["ridge_fallback"] = True
    return beta


def wls(X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> LinearFit:
    """Weighted least squares with HC1 sandwich covariance.

    Minimizes ``sum_i w_i (y_i - X_i beta)^2``. Weights default to one.
    Residuals are unweighted (``y - X beta``).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = X.shape
    if len(y) != n:
        raise ValueError("X and y row counts differ")
    if w is None:
        w = np.ones(n)
    else:
        w = np.asarray(w, dtype=np.float64).ravel()
        if len(w) != n:
            raise ValueError("weight length mismatch")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
    flags: dict = {"ridge_fallback": False}
    Xw = X * w[:, None]
    a = Xw.T @ X
    rhs = Xw.T @ y
    beta = _solve_normal_equations(a, rhs, flags)
    u = y - X @ beta
    # HC1: bread = (X'WX)^-1, meat = X' diag(w^2 u^2) X, factor n/(n-m)
    bread_rhs = _solve_normal_equations(
        a, (X * (w**2 * u**2)[:, None]).T @ X, dict(flags)
    )
    bread = _solve_normal_equations(a, bread_rhs.T, dict(flags))
    factor = n / max(n - m, 1)
    vcov = factor * bread
    vcov = (vcov + vcov.T) / 2.0
    return LinearFit(coef=beta, vcov=vcov, residuals=u, flags=flags)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -35.0, 35.0)))


def logit_irls(
    X: np.ndarray,
    d: np.ndarray,
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
) -> LinearFit:
    """Logistic regression by Newton / iteratively reweighted least squares.

    Convergence is declared when the gradient of the *average* Bernoulli
    log-likelihood, ``X'(d - p)/n``, has sup-norm below ``tol`` (sum-form
    tolerances would scale with n). If the coefficient sup-norm exceeds 30
    the data are treated as separated: coefficients are clipped to [-30, 30],
    a :class:`SeparationDetected` warning is emitted, and the clipped fit is
    returned with ``flags["separation"] = True``. Hitting ``max_iter``
    without either outcome raises :class:`NonConvergence`.
    """
    X = np.asarray(X, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).ravel()
    n, m = X.shape
    if len(d) != n:
        raise ValueError("X and d row counts differ")
    if np.all(d == d[0]):
        raise ValueError("treatment indicator is constant")
    flags: dict = {"ridge_fallback": False, "converged": False, "separation": False}
    beta = np.zeros(m)
    loglik = -np.inf
    converged = False
    for _ in range(max_iter):
        eta = X @ beta
        p = _sigmoid(eta)
        score = X.T @ (d - p) / n
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            beta = np.clip(beta, -SEPARATION_BOUND, SEPARATION_BOUND)
            flags["separation"] = True
            warnings.warn(
                "logistic fit diverged; returning clipped coefficients",
                SeparationDetected,
                stacklevel=2,
            )
            break
        w = np.maximum(p * (1.0 - p), 1e-10)
        a = (X * w[:, None]).T @ X / n
        step = _solve_normal_equations(a, score, flags)
        # step halving guards rare IRLS oscillation
        new_loglik = -np.inf
        for _half in range(10):
            cand = beta + step
            eta_c = X @ cand
            new_loglik = np.sum(d * eta_c - np.logaddexp(0.0, eta_c))
            if new_loglik >= loglik - 1e-10 or not np.isfinite(loglik):
                break
            step = step / 2.0
        beta = beta + step
        loglik = new_loglik
    else:
        raise NonConvergence(
            f"IRLS did not converge in {max_iter} iterations"
        )
    if converged:
        flags["converged"] = True
    eta = X @ beta
    p = _sigmoid(eta)
    w = np.maximum(p * (1.0 - p), 1e-10)
    a = (X * w[:, None]).T @ X
    vcov = _solve_normal_equations(a, np.eye(m), dict(flags))
    vcov = (vcov + vcov.T) / 2.0
    return LinearFit(coef=beta, vcov=vcov, residuals=d - p, flags=flags)


# ---------------------------------------------------------------------------
# Coordinate-descent Lasso


@dataclass
class LassoPath:
    """Solution path of a Lasso fit over a descending penalty grid.

    ``coefs`` has one column per penalty value (original scale, no
    intercept row); ``intercepts`` carries the unpenalized intercepts.
    ``cv_mse`` is mean squared error (gaussian) or mean deviance (binomial)
    from k-fold cross-validation; ``lambda_min`` is the smallest penalty
    attaining the minimum (less shrinkage preferred at ties).
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    intercepts: np.ndarray
    cv_mse: np.ndarray
    lambda_min: float
    lambda_max: float
    family: str

    def coef_at(self, lam: float) -> tuple[float, np.ndarray]:
        """(intercept, coefficients) at the grid value closest to ``lam``."""
        idx = int(np.argmin(np.abs(self.lambdas - lam)))
        return float(self.intercepts[idx]), self.coefs[:, idx].copy()

    def selected_at(self, lam: float) -> tuple[int, ...]:
        _, coef = self.coef_at(lam)
        return tuple(np.flatnonzero(coef != 0.0).tolist())


@njit(cache=True)
def _gaussian_cd_kernel(G, gy, n, lambdas, tol, max_sweeps):  # pragma: no cover
    # Covariance-form coordinate descent: with c = G beta maintained
    # incrementally, the partial gradient (gy[j] - c[j]) / n costs O(1)
    # per visit and O(p) only when a coefficient actually moves.
    p = G.shape[0]
    n_lam = lambdas.shape[0]
    coefs = np.zeros((p, n_lam))
    beta = np.zeros(p)
    c = np.zeros(p)
    cj = np.empty(p)
    for j in range(p):
        cj[j] = G[j, j] / n
    for li in range(n_lam):
        lam = lambdas[li]
        # clear accumulated drift before each penalty value
        c = np.dot(G, beta)
        newton_ok = True
        for _ in range(max_sweeps):
            # full sweep (KKT pass over every coordinate)
            maxd = 0.0
            for j in range(p):
                if cj[j] <= 0.0:
                    continue
                bj = beta[j]
                rho = (gy[j] - c[j]) / n + cj[j] * bj
                if rho > lam:
                    bn = (rho - lam) / cj[j]
                elif rho < -lam:
                    bn = (rho + lam) / cj[j]
                else:
                    bn = 0.0
                if bn != bj:
                    delta = bn - bj
                    for k in range(p):
                        c[k] += G[k, j] * delta
                    beta[j] = bn
                    ad = abs(delta)
                    if ad > maxd:
                        maxd = ad
            if maxd < tol:
                break
            # jump to the exact penalized solution at the current sign
            # pattern, zeroing coordinates whose sign flips; kept only if
            # the penalized objective decreases, and the fixed point is
            # still certified only by the full sweep above
            if newton_ok:
                phi0 = (
                    -np.dot(gy, beta) / n
                    + 0.5 * np.dot(beta, c) / n
                    + lam * np.abs(beta).sum()
                )
                beta_old = beta.copy()
                for _ in range(8):
                    idx = np.nonzero(beta)[0]
                    na = idx.size
                    if na == 0:
                        break
                    ga = np.empty((na, na))
                    rhs = np.empty(na)
                    trace = 0.0
                    for a in range(na):
                        ja = idx[a]
                        s = 1.0 if beta[ja] > 0.0 else -1.0
                        rhs[a] = gy[ja] / n - lam * s
                        for b in range(na):
                            ga[a, b] = G[ja, idx[b]] / n
                        trace += ga[a, a]
                    ridge = 1e-12 * trace / na + 1e-300
                    for a in range(na):
                        ga[a, a] += ridge
                    sol = np.linalg.solve(ga, rhs)
                    flipped = False
                    for a in range(na):
                        if sol[a] * beta[idx[a]] < 0.0:
                            beta[idx[a]] = 0.0
                            flipped = True
                        else:
                            beta[idx[a]] = sol[a]
                    if not flipped:
                        break
                c = np.dot(G, beta)
                phi1 = (
                    -np.dot(gy, beta) / n
                    + 0.5 * np.dot(beta, c) / n
                    + lam * np.abs(beta).sum()
                )
                if phi1 >= phi0:
                    beta = beta_old
                    c = np.dot(G, beta)
                    newton_ok = False
            # polish on the active set before the next full pass
            for _ in range(max_sweeps):
                maxa = 0.0
                for j in range(p):
                    if beta[j] == 0.0 or cj[j] <= 0.0:
                        continue
                    bj = beta[j]
                    rho = (gy[j] - c[j]) / n + cj[j] * bj
                    if rho > lam:
                        bn = (rho - lam) / cj[j]
                    elif rho < -lam:
                        bn = (rho + lam) / cj[j]
                    else:
                        bn = 0.0
                    if bn != bj:
                        delta = bn - bj
                        for k in range(p):
                            c[k] += G[k, j] * delta
                        beta[j] = bn
                        ad = abs(delta)
                        if ad > maxa:
                            maxa = ad
                if maxa < tol:
                    break
        coefs[:, li] = beta
    return coefs


def _gaussian_cd_path(Xs, yc, lambdas, tol, max_sweeps):
    G = np.ascontiguousarray(Xs.T @ Xs)
    gy = Xs.T @ yc
    return _gaussian_cd_kernel(G, gy, Xs.shape[0], lambdas, tol, max_sweeps)


@njit(cache=True)
def _binomial_cov_sweep(
    Gw, gwz, gw1, cjw, sw, swz, beta_e, c, s1, b0, lam, active_only
):  # pragma: no cover
    # One coordinate-descent pass over the working weighted-least-squares
    # problem in covariance form. c tracks Gw @ beta_e and s1 tracks
    # gw1 @ beta_e; the unpenalized intercept is re-minimized exactly after
    # every coefficient move. Returns (maxd, s1, b0).
    ne = beta_e.shape[0]
    maxd = 0.0
    for a in range(ne):
        if cjw[a] <= 0.0 or (active_only and beta_e[a] == 0.0):
            continue
        ba = beta_e[a]
        rho = gwz[a] - gw1[a] * b0 - c[a] + cjw[a] * ba
        if rho > lam:
            bn = (rho - lam) / cjw[a]
        elif rho < -lam:
            bn = (rho + lam) / cjw[a]
        else:
            bn = 0.0
        if bn != ba:
            delta = bn - ba
            for k in range(ne):
                c[k] += Gw[a, k] * delta
            s1 += gw1[a] * delta
            beta_e[a] = bn
            b0_new = (swz - s1) / sw
            ad = abs(delta)
            if abs(b0_new - b0) > ad:
                ad = abs(b0_new - b0)
            b0 = b0_new
            if ad > maxd:
                maxd = ad
    return maxd, s1, b0


@njit(cache=True)
def _binomial_cov_newton(
    Gw, gwz, gw1, sw, swz, beta_e, lam
):  # pragma: no cover
    # Exact penalized WLS solve on the active set at fixed signs, with an
    # unpenalized intercept; coordinates whose sign flips are zeroed and the
    # solve repeats. Mutates beta_e; returns the largest coefficient move.
    jump = 0.0
    for _ in range(8):
        idx = np.nonzero(beta_e)[0]
        na = idx.size
        if na == 0:
            break
        m = na + 1
        mat = np.empty((m, m))
        rhs = np.empty(m)
        mat[0, 0] = sw
        rhs[0] = swz
        for a in range(na):
            ja = idx[a]
            mat[0, a + 1] = gw1[ja]
            mat[a + 1, 0] = gw1[ja]
            s = 1.0 if beta_e[ja] > 0.0 else -1.0
            rhs[a + 1] = gwz[ja] - lam * s
            for b in range(a, na):
                v = Gw[ja, idx[b]]
                mat[a + 1, b + 1] = v
                mat[b + 1, a + 1] = v
        trace = 0.0
        for a in range(m):
            trace += mat[a, a]
        ridge = 1e-12 * trace / m + 1e-300
        for a in range(1, m):
            mat[a, a] += ridge
        sol = np.linalg.solve(mat, rhs)
        flipped = False
        for a in range(na):
            old = beta_e[idx[a]]
            new = sol[a + 1]
            if new * old < 0.0:
                new = 0.0
                flipped = True
            dmove = abs(new - old)
            if dmove > jump:
                jump = dmove
            beta_e[idx[a]] = new
        if not flipped:
            break
    return jump


@njit(cache=True)
def _binomial_cd_path(
    Xs, d, lambdas, tol, max_sweeps, max_irls
):  # pragma: no cover
    # Penalized logistic path with sequential screening: each lambda is
    # solved over active-or-near-active columns only, then a full score pass
    # (gl = X'(d - pi)/n) certifies the excluded columns and seeds the next
    # lambda's screen. IRLS working problems run in covariance form so the
    # per-coefficient cost is independent of n after one Gram build per step.
    n, p = Xs.shape
    n_lam = lambdas.shape[0]
    coefs = np.zeros((p, n_lam))
    b0s = np.zeros(n_lam)
    dbar = d.mean()
    b0_null = np.log(dbar / (1.0 - dbar))
    beta = np.zeros(p)
    b0 = b0_null
    eta = np.full(n, b0)
    Xt = Xs.T
    res = np.empty(n)
    for i in range(n):
        res[i] = d[i] - dbar
    gl0 = np.dot(Xt, res) / n
    gl = gl0.copy()
    eligible = np.zeros(p, np.bool_)
    lam_prev = -1.0
    for li in range(n_lam):
        lam = lambdas[li]
        # zero vector is KKT-optimal when the null score is dominated; keep
        # the coefficients exactly zero (lam >= lambda_max contract)
        allz = True
        for j in range(p):
            if beta[j] != 0.0:
                allz = False
                break
        if allz:
            glmax = 0.0
            for j in range(p):
                a = abs(gl0[j])
                if a > glmax:
                    glmax = a
            if glmax <= lam * (1.0 + 1e-12):
                b0 = b0_null
                for i in range(n):
                    eta[i] = b0
                for j in range(p):
                    gl[j] = gl0[j]
                b0s[li] = b0_null
                lam_prev = lam
                continue
        thr = 2.0 * lam - lam_prev if lam_prev > 0.0 else lam
        for j in range(p):
            eligible[j] = beta[j] != 0.0 or abs(gl[j]) >= thr
        for _screen in range(40):
            elig_idx = np.nonzero(eligible)[0]
            ne = elig_idx.size
            if ne == 0:
                b0 = b0_null
                for i in range(n):
                    eta[i] = b0
            else:
                XE = np.empty((n, ne))
                for a in range(ne):
                    ja = elig_idx[a]
                    for i in range(n):
                        XE[i, a] = Xs[i, ja]
                beta_e = np.empty(ne)
                for a in range(ne):
                    beta_e[a] = beta[elig_idx[a]]
                for _irls in range(max_irls):
                    # quadratic approximation at the current linear predictor
                    w = np.empty(n)
                    wz = np.empty(n)
                    sw = 0.0
                    swz = 0.0
                    szz = 0.0
                    for i in range(n):
                        e = eta[i]
                        if e > 35.0:
                            e = 35.0
                        elif e < -35.0:
                            e = -35.0
                        pi = 1.0 / (1.0 + np.exp(-e))
                        if pi < 1e-5:
                            pi = 1e-5
                        elif pi > 1.0 - 1e-5:
                            pi = 1.0 - 1e-5
                        wi = pi * (1.0 - pi)
                        zi = e + (d[i] - pi) / wi
                        w[i] = wi
                        wz[i] = wi * zi
                        sw += wi
                        swz += wi * zi
                        szz += wi * zi * zi
                    sw /= n
                    swz /= n
                    szz /= n
                    WXE = np.empty((n, ne))
                    for i in range(n):
                        wi = w[i]
                        for a in range(ne):
                            WXE[i, a] = wi * XE[i, a]
                    Gw = np.dot(XE.T, WXE) / n
                    gwz = np.dot(XE.T, wz) / n
                    gw1 = np.dot(XE.T, w) / n
                    cjw = np.empty(ne)
                    for a in range(ne):
                        cjw[a] = Gw[a, a]
                    c = np.dot(Gw, beta_e)
                    s1 = np.dot(gw1, beta_e)
                    beta_snap = beta_e.copy()
                    b0_snap = b0
                    b0 = (swz - s1) / sw
                    newton_ok = True
                    for _ in range(max_sweeps):
                        maxd, s1, b0 = _binomial_cov_sweep(
                            Gw, gwz, gw1, cjw, sw, swz,
                            beta_e, c, s1, b0, lam, False,
                        )
                        if maxd < tol:
                            break
                        # exact active-set jump, kept only if the penalized
                        # working objective decreases
                        if newton_ok:
                            phi0 = (
                                0.5 * (szz - 2.0 * b0 * swz + b0 * b0 * sw)
                                - np.dot(gwz, beta_e) + b0 * s1
                                + 0.5 * np.dot(beta_e, c)
                                + lam * np.abs(beta_e).sum()
                            )
                            beta_old = beta_e.copy()
                            jump = _binomial_cov_newton(
                                Gw, gwz, gw1, sw, swz, beta_e, lam
                            )
                            if jump > 0.0:
                                c = np.dot(Gw, beta_e)
                                s1 = np.dot(gw1, beta_e)
                                b0 = (swz - s1) / sw
                                phi1 = (
                                    0.5 * (szz - 2.0 * b0 * swz + b0 * b0 * sw)
                                    - np.dot(gwz, beta_e) + b0 * s1
                                    + 0.5 * np.dot(beta_e, c)
                                    + lam * np.abs(beta_e).sum()
                                )
                                if phi1 >= phi0:
                                    beta_e = beta_old
                                    c = np.dot(Gw, beta_e)
                                    s1 = np.dot(gw1, beta_e)
                                    b0 = (swz - s1) / sw
                                    newton_ok = False
                        for _ in range(max_sweeps):
                            maxa, s1, b0 = _binomial_cov_sweep(
                                Gw, gwz, gw1, cjw, sw, swz,
                                beta_e, c, s1, b0, lam, True,
                            )
                            if maxa < tol:
                                break
                    irls_change = abs(b0 - b0_snap)
                    for a in range(ne):
                        dmove = abs(beta_e[a] - beta_snap[a])
                        if dmove > irls_change:
                            irls_change = dmove
                    eta = np.dot(XE, beta_e)
                    for i in range(n):
                        eta[i] += b0
                    if irls_change < tol:
                        break
                for a in range(ne):
                    beta[elig_idx[a]] = beta_e[a]
            # full-score certification of screened-out columns
            for i in range(n):
                e = eta[i]
                if e > 35.0:
                    e = 35.0
                elif e < -35.0:
                    e = -35.0
                res[i] = d[i] - 1.0 / (1.0 + np.exp(-e))
            gl = np.dot(Xt, res) / n
            viol = False
            for j in range(p):
                if not eligible[j] and abs(gl[j]) > lam + 1e-9:
                    eligible[j] = True
                    viol = True
            if not viol:
                break
        coefs[:, li] = beta
        b0s[li] = b0
        lam_prev = lam
    return coefs, b0s


def _gaussian_cd_path_reference(Xs, yc, lambdas, tol, max_sweeps):
    """Pure-numpy mirror of the jitted gaussian path (used as a test oracle,
    and to record the per-sweep objective, which must be non-increasing)."""
    n, p = Xs.shape
    coefs = np.zeros((p, len(lambdas)))
    beta = np.zeros(p)
    r = yc.copy()
    cj = np.einsum("ij,ij->j", Xs, Xs) / n
    objectives: list[list[float]] = []

    def objective(lam):
        return float(r @ r / (2 * n) + lam * np.abs(beta).sum())

    def sweep(lam, active_only):
        maxd = 0.0
        for j in range(p):
            if cj[j] <= 0.0 or (active_only and beta[j] == 0.0):
                continue
            bj = beta[j]
            rho = Xs[:, j] @ r / n + cj[j] * bj
            bn = np.sign(rho) * max(abs(rho) - lam, 0.0) / cj[j]
            if bn != bj:
                r[:] -= (bn - bj) * Xs[:, j]
                beta[j] = bn
                maxd = max(maxd, abs(bn - bj))
        return maxd

    for li, lam in enumerate(lambdas):
        trace = [objective(lam)]
        for _ in range(max_sweeps):
            maxd = sweep(lam, active_only=False)
            trace.append(objective(lam))
            if maxd < tol:
                break
            for _ in range(max_sweeps):
                if sweep(lam, active_only=True) < tol:
                    break
            trace.append(objective(lam))
        coefs[:, li] = beta
        objectives.append(trace)
    return coefs, objectives


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    Xs = np.asfortranarray((X - mu) / sd)
    return Xs, mu, sd


def _lambda_grid(lambda_max: float, n_lambda: int = N_LAMBDA) -> np.ndarray:
    lambda_max = max(float(lambda_max), 1e-12)
    return np.geomspace(lambda_max, LAMBDA_MIN_RATIO * lambda_max, n_lambda)


def lasso_cd(
    X: np.ndarray,
    y: np.ndarray,
    family: Literal["gaussian", "binomial"] = "gaussian",
    lambdas: np.ndarray | None = None,
    k_cv: int = 5,
    seed: int = 0,
    tol: float = LASSO_TOL,
    max_sweeps: int = 10_000,
) -> LassoPath:
    """Coordinate-descent Lasso path with k-fold penalty selection.

    ``X`` is the raw feature matrix (no intercept column); the intercept is
    handled implicitly (gaussian: centering; binomial: explicit unpenalized
    intercept). Convergence is max coefficient change below ``tol`` on a
    full sweep. The objective is ``(1/2n)||y - b0 - X b||^2 + lam ||b||_1``
    (gaussian) or the average Bernoulli deviance/2 plus penalty (binomial),
    both on the standardized scale.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if len(y) != n:
        raise ValueError("X and y row counts differ")
    if family not in ("gaussian", "binomial"):
        raise ValueError(f"unknown family {family!r}")
    if family == "binomial" and not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial family requires a 0/1 target")
    if not 2 <= k_cv <= n:
        raise ValueError("need 2 <= k_cv <= n")

    if p == 0:
        raise ValueError("X must have at least one feature column")
    Xs, mu, sd = _standardize(X)
    lambda_max = float(np.max(np.abs(Xs.T @ (y - y.mean())))) / n
    if lambdas is None:
        lambdas = _lambda_grid(lambda_max)
    else:
        lambdas = np.sort(np.asarray(lambdas, dtype=np.float64))[::-1].copy()

    # run the gaussian kernel on a unit-variance outcome so the sweep
    # tolerance is scale-free: b(lam) = s * b_scaled(lam / s)
    yc = y - y.mean()
    ysd = float(yc.std())
    yscale = ysd if ysd > 0.0 else 1.0
    if family == "gaussian":
        coefs_std = yscale * _gaussian_cd_path(
            Xs, yc / yscale, lambdas / yscale, tol, max_sweeps
        )
        intercepts_std = None
    else:
        coefs_std, intercepts_std = _binomial_cd_path(Xs, y, lambdas, tol, max_sweeps, 50)

    # cross-validated loss on the fixed full-sample penalty grid
    folds = assign_folds(n, k_cv, seed)
    cv_loss = np.zeros(len(lambdas))
    for k in range(k_cv):
        tr = folds.train_rows(k)
        te = folds.test_rows(k)
        Xtr, mtr, str_ = _standardize(X[tr])
        if family == "gaussian":
            ytr = y[tr]
            ctr = yscale * _gaussian_cd_path(
                Xtr, (ytr - ytr.mean()) / yscale, lambdas / yscale, tol, max_sweeps
            )
            beta_orig = ctr / str_[:, None]
            icept = ytr.mean() - mtr @ beta_orig
            pred = X[te] @ beta_orig + icept
            cv_loss += np.sum((y[te][:, None] - pred) ** 2, axis=0)
        else:
            ctr, b0tr = _binomial_cd_path(Xtr, y[tr], lambdas, tol, max_sweeps, 50)
            beta_orig = ctr / str_[:, None]
            icept = b0tr - mtr @ beta_orig
            prob = _sigmoid(X[te] @ beta_orig + icept)
            prob = np.clip(prob, 1e-12, 1.0 - 1e-12)
            dev = -2.0 * (
                y[te][:, None] * np.log(prob)
                + (1.0 - y[te][:, None]) * np.log(1.0 - prob)
            )
            cv_loss += np.sum(dev, axis=0)
    cv_loss /= n

    # smallest penalty attaining the minimum (ties -> less shrinkage)
    min_idx = int(np.max(np.flatnonzero(cv_loss == cv_loss.min())))
    lambda_min = float(lambdas[min_idx])

    beta_orig = coefs_std / sd[:, None]
    if family == "gaussian":
        intercepts = y.mean() - mu @ beta_orig
    else:
        intercepts = intercepts_std - mu @ beta_orig
    return LassoPath(
        lambdas=lambdas,
        coefs=beta_orig,
        intercepts=np.asarray(intercepts, dtype=np.float64),
        cv_mse=cv_loss,
        lambda_min=lambda_min,
        lambda_max=max(lambda_max, 1e-12),
        family=family,
    )


def post_selection_refit(
    X: np.ndarray,
    target: np.ndarray,
    selected: Sequence[int],
    family: Literal["gaussian", "binomial"] = "gaussian",
) -> LinearFit:
    """Unpenalized refit on the selected columns.

    Returns a fit whose ``coef`` has length ``p + 1``: entry 0 is the
    intercept, entries 1..p align with the columns of ``X`` and are zero
    off the selected set. An empty selection gives an intercept-only fit.
    """
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).ravel()
    n, p = X.shape
    sel = tuple(sorted(int(j) for j in set(selected)))
    if any(j < 0 or j >= p for j in sel):
        raise ValueError("selected column index out of range")
    design = np.column_stack([np.ones(n), X[:, sel]])
    if family == "gaussian":
        fit = wls(design, target)
    elif family == "binomial":
        fit = logit_irls(design, target)
    else:
        raise ValueError(f"unknown family {family!r}")
    coef = np.zeros(p + 1)
    coef[0] = fit.coef[0]
    vcov = np.zeros((p + 1, p + 1))
    vcov[0, 0] = fit.vcov[0, 0]
    for a, j in enumerate(sel):
        coef[1 + j] = fit.coef[1 + a]
        vcov[0, 1 + j] = vcov[1 + j, 0] = fit.vcov[0, 1 + a]
        for b, k in enumerate(sel):
            vcov[1 + j, 1 + k] = fit.vcov[1 + a, 1 + b]
    return LinearFit(
        coef=coef,
        vcov=vcov,
        residuals=fit.residuals,
        selected=sel,
        flags=dict(fit.flags),
    )


def predict_refit(
    fit: LinearFit, X: np.ndarray, family: Literal["gaussian", "binomial"] = "gaussian"
) -> np.ndarray:
    """Predictions from a :func:`post_selection_refit` result on raw features."""
    eta = fit.coef[0] + np.asarray(X, dtype=np.float64) @ fit.coef[1:]
    if family == "binomial":
        return _sigmoid(eta)
    return eta


# ---------------------------------------------------------------------------
# B-spline bases


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis specification.

    The basis is complete (intercept-inclusive): ``df`` equals the number of
    interior knots plus ``degree`` plus one, and basis functions sum to one
    at every point of ``[lo, hi]``.
    """

    degree: int
    interior_knots: np.ndarray
    boundary: tuple[float, float]

    def __post_init__(self) -> None:
        knots = np.asarray(self.interior_knots, dtype=np.float64).ravel()
        knots = np.ascontiguousarray(knots)
        knots.flags.writeable = False
        object.__setattr__(self, "interior_knots", knots)
        lo, hi = self.boundary
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError("boundary must satisfy lo < hi")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if len(knots) and (np.any(knots <= lo) or np.any(knots >= hi)):
            raise ValueError("interior knots must lie strictly inside (lo, hi)")
        if np.any(np.diff(knots) < 0):
            raise ValueError("interior knots must be nondecreasing")

    @property
    def df(self) -> int:
        return len(self.interior_knots) + self.degree + 1


def make_spline_basis(
    sample: np.ndarray, degree: int = 3, df: int = 6
) -> SplineBasis:
    """Basis with ``df - degree - 1`` interior knots at equally spaced
    quantiles of ``sample`` and boundary at the sample range."""
    sample = np.asarray(sample, dtype=np.float64).ravel()
    lo, hi = float(sample.min()), float(sample.max())
    if not lo < hi:
        raise DegenerateSample("sample has zero range; no spline basis exists")
    n_interior = df - degree - 1
    if n_interior < 0:
        raise ValueError("df must be at least degree + 1")
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.quantile(sample, probs) if n_interior else np.empty(0)
    inner_lo = np.nextafter(lo, hi)
    inner_hi = np.nextafter(hi, lo)
    knots = np.clip(knots, inner_lo, inner_hi)
    return SplineBasis(degree=degree, interior_knots=knots, boundary=(lo, hi))


def bspline_basis(x: np.ndarray, basis: SplineBasis) -> np.ndarray:
    """Evaluate the complete clamped B-spline basis by the Cox-de Boor
    recursion. Out-of-range points are clamped to the boundary. Columns
    equal ``basis.df``; rows sum to one."""
    x = np.asarray(x, dtype=np.float64).ravel()
    lo, hi = basis.boundary
    deg = basis.degree
    xc = np.clip(x, lo, hi)
    t = np.concatenate(
        [np.full(deg + 1, lo), basis.interior_knots, np.full(deg + 1, hi)]
    )
    n_funcs = len(t) - 1
    b = np.zeros((len(xc), n_funcs))
    for i in range(n_funcs):
        if t[i] < t[i + 1]:
            b[:, i] = (xc >= t[i]) & (xc < t[i + 1])
    # close the final nonempty interval so x == hi is representable
    last = max(i for i in range(n_funcs) if t[i] < t[i + 1])
    b[xc == hi, :] = 0.0
    b[xc == hi, last] = 1.0
    for k in range(1, deg + 1):
        nb = np.zeros((len(xc), n_funcs - k))
        for i in range(n_funcs - k):
            den1 = t[i + k] - t[i]
            if den1 > 0.0:
                nb[:, i] += (xc - t[i]) / den1 * b[:, i]
            den2 = t[i + k + 1] - t[i + 1]
            if den2 > 0.0:
                nb[:, i] += (t[i + k + 1] - xc) / den2 * b[:, i + 1]
        b = nb
    return b


# ---------------------------------------------------------------------------
# Basis expansion of (x, z)


@dataclass
class _VariableBlock:
    name: str
    kind: Literal["spline", "passthrough"]
    basis: SplineBasis | None

    def evaluate(self, values: np.ndarray) -> tuple[np.ndarray, list[str]]:
        if self.kind == "passthrough":
            return values.reshape(-1, 1), [self.name]
        mat = bspline_basis(values, self.basis)[:, 1:]  # drop first function
        names = [f"{self.name}_s{j + 1}" for j in range(mat.shape[1])]
        return mat, names


@dataclass
class DesignMatrix:
    """Basis-expanded regressor matrix with column metadata.

    ``matrix`` rows align with the dataset used to build the expansion;
    ``transform`` re-applies the frozen expansion (same knots) to new
    moderator/covariate values.
    """

    matrix: np.ndarray
    names: list[str]
    include_interactions: bool
    _blocks: list[_VariableBlock]

    def transform(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.shape[1] != len(self._blocks) - 1:
            raise ValueError("covariate count differs from the fitted expansion")
        columns = [x] + [z[:, j] for j in range(z.shape[1])]
        mats = [blk.evaluate(col)[0] for blk, col in zip(self._blocks, columns)]
        parts = [np.ones((len(x), 1))] + mats
        if self.include_interactions:
            for a in range(len(mats)):
                for b in range(a + 1, len(mats)):
                    prod = (mats[a][:, :, None] * mats[b][:, None, :]).reshape(
                        len(x), -1
                    )
                    parts.append(prod)
        return np.column_stack(parts)


def _is_binary(values: np.ndarray) -> bool:
    return bool(np.all((values == 0.0) | (values == 1.0)))


def expand_design(ds: Dataset, include_interactions: bool = True) -> DesignMatrix:
    """Expand (x, z) into spline blocks plus optional pairwise interactions.

    Each continuous variable becomes a 6-column cubic B-spline block: the
    complete 7-function basis with interior knots at its 25/50/75th
    percentiles, minus the first function (a single global intercept column
    is emitted once instead). Binary and (near-)constant columns pass
    through untransformed. With ``include_interactions``, pairwise products
    of the x-block with every z-block and between distinct z-blocks are
    appended. Column names record every term.
    """
    variables = [("x", ds.x)] + [(f"z{j + 1}", ds.z[:, j]) for j in range(ds.p)]
    blocks: list[_VariableBlock] = []
    for name, values in variables:
        if _is_binary(values) or values.max() - values.min() < 1e-12:
            blocks.append(_VariableBlock(name=name, kind="passthrough", basis=None))
        else:
            basis = make_spline_basis(values, degree=3, df=7)
            blocks.append(_VariableBlock(name=name, kind="spline", basis=basis))
    mats: list[np.ndarray] = []
    names_per_block: list[list[str]] = []
    columns = [ds.x] + [ds.z[:, j] for j in range(ds.p)]
    for blk, col in zip(blocks, columns):
        mat, names = blk.evaluate(col)
        mats.append(mat)
        names_per_block.append(names)
    parts = [np.ones((ds.n, 1))]
    all_names = ["const"]
    for mat, names in zip(mats, names_per_block):
        parts.append(mat)
        all_names.extend(names)
    if include_interactions:
        for a in range(len(mats)):
            for b in range(a + 1, len(mats)):
                prod = (mats[a][:, :, None] * mats[b][:, None, :]).reshape(ds.n, -1)
                parts.append(prod)
                all_names.extend(
                    f"{na}*{nb}"
                    for na in names_per_block[a]
                    for nb in names_per_block[b]
                )
    matrix = np.column_stack(parts)
    return DesignMatrix(
        matrix=matrix,
        names=all_names,
        include_interactions=include_interactions,
        _blocks=blocks,
    )


# ---------------------------------------------------------------------------
# Kernel density estimation


def kde_gaussian(x: np.ndarray, eval_points: np.ndarray) -> np.ndarray:
    """Gaussian KDE with Silverman's bandwidth 1.06*min(sd, IQR/1.34)*n^(-1/5).

    A zero IQR (heavily tied data) falls back to the standard deviation so
    the bandwidth stays positive. Densities are floored at the smallest
    positive float, so they are strictly positive.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    eval_points = np.asarray(eval_points, dtype=np.float64).ravel()
    n = len(x)
    if n < 2:
        raise DegenerateSample("KDE needs at least two points")
    sd = float(np.std(x))
    if sd <= 0.0:
        raise DegenerateSample("KDE sample has zero spread")
    iqr = float(np.quantile(x, 0.75) - np.quantile(x, 0.25))
    scale = min(sd, iqr / 1.34) if iqr > 0.0 else sd
    bw = 1.06 * scale * n ** (-0.2)
    out = np.empty(len(eval_points))
    norm = 1.0 / (n * bw * np.sqrt(2.0 * np.pi))
    chunk = max(1, int(2**22 // max(n, 1)))
    for start in range(0, len(eval_points), chunk):
        pts = eval_points[start : start + chunk]
        u = (pts[:, None] - x[None, :]) / bw
        out[start : start + chunk] = norm * np.exp(-0.5 * u * u).sum(axis=1)
    return np.maximum(out, np.finfo(np.float64).tiny)
