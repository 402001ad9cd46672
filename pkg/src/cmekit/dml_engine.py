"""Cross-fitted and Lasso-based effect-curve pipelines.

Every pipeline follows the same shape: estimate nuisance functions, build
a per-observation signal whose conditional mean given the moderator is the
effect curve, project it on functions of the moderator, then attach bands.

- :func:`dml_binary_cme`: K-fold cross-fitted outcome regressions (one per
  arm) and propensity, doubly robust signal by default, spline projection,
  sandwich plus Gaussian-multiplier bands.
- :func:`dml_continuous_cme`: K-fold cross-fitted conditional means of Y
  and D, then the residual-on-residual projection (the effect multiplies
  the treatment residual), same bands.
- :func:`po_lasso_cme`: the continuous pipeline without sample splitting,
  with post-Lasso nuisances on the spline-expanded design and bootstrap
  bands (selection re-run per replicate at the frozen penalty).
- :func:`aipw_lasso_cme`: full-sample post-Lasso outcome and propensity
  fits on the expanded design, doubly robust (or plug-in) signal, and
  bootstrap bands with frozen penalties and knots.

Cross-fitting honesty: each observation's nuisance prediction comes from a
model fitted without its fold. With default global tuning, penalties and
hyperparameters are chosen once on the full sample and then held fixed
across folds; pass ``tuning="per_fold"`` to re-tune inside every fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .classic_estimators import CmeCurve, attach_bands, default_grid
from .dataset import Dataset, FoldAssignment, assign_folds
from .inference import (
    BandResult,
    multiplier_band,
    nonparam_bootstrap_band,
    sandwich_band,
)
from .learners import LearnerSpec, fit as fit_learner, oof_loss
from .numerics import DesignMatrix, expand_design, lasso_cd
from .rng import derive_seed
from .signals import (
    NuisanceFit,
    SignalVector,
    aipw_signal,
    clip_propensity,
    ipw_signal,
    outcome_signal,
)
from .smoothing import ProjectorFit, SmootherSpec, project_residuals, project_signal

__all__ = [
    "CrossfitResult",
    "DmlResult",
    "crossfit_nuisances",
    "dml_binary_cme",
    "dml_continuous_cme",
    "po_lasso_cme",
    "aipw_lasso_cme",
    "FoldMissingTreatmentArm",
    "DegenerateTreatmentResiduals",
]

PROPENSITY_CLIP = 0.01
DISCRETE_MODERATOR_MAX_LEVELS = 10

# stable seed indices per role so fold fits are reproducible independently
_ROLE_BASE = {"mu1": 100, "mu0": 200, "pi": 300, "g": 400, "m": 500}
_TUNE_BASE = 900


class FoldMissingTreatmentArm(ValueError):
    """A training fold contains only one treatment arm."""


class DegenerateTreatmentResiduals(ValueError):
    """Treatment residuals have (near) zero variance; the residual
    projection is unidentified."""


@dataclass
class CrossfitResult:
    """Out-of-fold nuisance predictions plus bookkeeping."""

    nuis: NuisanceFit
    folds: FoldAssignment | None
    learner_kind: str
    details: dict = field(default_factory=dict)


def _feature_matrix(
    ds: Dataset, learner_kind: str, features: str
) -> tuple[np.ndarray, DesignMatrix | None]:
    """Raw (x, z) for trees; spline-expanded design for the Lasso."""
    if features == "raw" or (features == "auto" and learner_kind != "post_lasso"):
        return np.column_stack([ds.x, ds.z]), None
    expansion = expand_design(ds, include_interactions=True)
    return expansion.matrix[:, 1:], expansion  # lasso supplies its own intercept


def _tune_lambda(F: np.ndarray, y: np.ndarray, task: str, seed: int) -> float:
    family = "gaussian" if task == "regression" else "binomial"
    path = lasso_cd(F, y, family=family, seed=seed)
    return path.lambda_min


def _role_spec(
    learner_kind: str,
    task: str,
    params: dict | None,
    oracle_fn: Callable | None,
) -> LearnerSpec:
    if oracle_fn is not None:
        return LearnerSpec(kind="oracle", task=task, oracle_fn=oracle_fn)
    return LearnerSpec(kind=learner_kind, task=task, params=params or {})


def crossfit_nuisances(
    ds: Dataset,
    learner: str = "post_lasso",
    k: int = 5,
    seed: int = 0,
    tuning: Literal["global", "per_fold"] = "global",
    params: dict | None = None,
    oracle: dict | None = None,
    features: Literal["auto", "raw", "expanded"] = "auto",
    learner_t: str | None = None,
    params_t: dict | None = None,
) -> CrossfitResult:
    """Out-of-fold nuisance predictions with K-fold cross-fitting.

    For a binary treatment, each training fold fits the outcome separately
    on its treated rows (mu1) and control rows (mu0) and the propensity on
    all rows; a fold whose training part lacks an arm raises
    :class:`FoldMissingTreatmentArm`. For a continuous treatment the
    conditional means of Y and of D are fitted on all rows. ``k=1`` skips
    splitting (train = predict = full sample). Propensities are clipped to
    [0.01, 0.99]. Losses in the result are out-of-fold: RMSE per outcome
    arm (on that arm's rows), log-loss for the propensity.

    ``learner`` fits the outcome roles; ``learner_t`` (default: same) fits
    the treatment roles, with ``params_t`` likewise. Each learner sees the
    feature representation ``features`` resolves to for its kind.

    ``oracle`` maps role names (``mu1``, ``mu0``, ``pi``, ``g``, ``m``) to
    functions of the feature matrix; supplying one replaces fitting for
    that role (a test seam, not reachable from the CLI).
    """
    params = dict(params or {})
    oracle = dict(oracle or {})
    learner_t = learner_t or learner
    params_t = dict(params_t) if params_t is not None else dict(params)
    binary = ds.treatment_type == "binary"
    if k == 1:
        folds = None
        fold_iter = [(np.arange(ds.n), np.arange(ds.n))]
    else:
        folds = assign_folds(ds, k, seed)
        fold_iter = [(folds.train_rows(f), folds.test_rows(f)) for f in range(k)]

    roles = ("mu1", "mu0", "pi") if binary else ("g", "m")
    tasks = {"mu1": "regression", "mu0": "regression", "pi": "classification",
             "g": "regression", "m": "regression"}
    if binary and ds.outcome_type == "binary":
        tasks = {**tasks, "mu1": "classification", "mu0": "classification"}
    targets = {"mu1": ds.y, "mu0": ds.y, "pi": ds.d, "g": ds.y, "m": ds.d}
    row_filter = {"mu1": ds.d == 1.0, "mu0": ds.d == 0.0}
    role_learner = {"mu1": learner, "mu0": learner, "g": learner,
                    "pi": learner_t, "m": learner_t}

    feats: dict[str, tuple[np.ndarray, DesignMatrix | None]] = {}
    for kind in {learner, learner_t}:
        feats[kind] = _feature_matrix(ds, kind, features)
    F, expansion = feats[learner]

    role_params: dict[str, dict] = {
        r: dict(params_t if role_learner[r] == learner_t else params)
        for r in roles
    }
    details: dict = {"tuning": tuning, "features": "expanded" if expansion else "raw",
                     "learner_t": learner_t}
    if tuning == "global" and "post_lasso" in (learner, learner_t):
        for r in roles:
            if role_learner[r] != "post_lasso":
                continue
            if r in oracle or "lambda" in role_params[r]:
                continue
            rows = row_filter.get(r, np.ones(ds.n, dtype=bool))
            Fr = feats[role_learner[r]][0]
            lam = _tune_lambda(
                Fr[rows],
                targets[r][rows],
                tasks[r],
                derive_seed(seed, _TUNE_BASE + _ROLE_BASE[r]),
            )
            role_params[r]["lambda"] = lam
        details["lambdas"] = {
            r: role_params[r].get("lambda")
            for r in roles
            if role_learner[r] == "post_lasso"
        }

    preds = {r: np.full(ds.n, np.nan) for r in roles}
    for f, (tr, te) in enumerate(fold_iter):
        d_tr = ds.d[tr]
        if binary and (not np.any(d_tr == 1.0) or not np.any(d_tr == 0.0)):
            raise FoldMissingTreatmentArm(f"training part of fold {f} lacks an arm")
        for r in roles:
            rows = tr[row_filter[r][tr]] if r in row_filter else tr
            Fr = feats[role_learner[r]][0]
            spec = _role_spec(role_learner[r], tasks[r], role_params[r], oracle.get(r))
            fitted = fit_learner(
                spec, Fr[rows], targets[r][rows],
                seed=derive_seed(seed, _ROLE_BASE[r] + f),
            )
            preds[r][te] = fitted.predict(Fr[te])

    losses: dict = {}
    if binary:
        pi = clip_propensity(preds["pi"], PROPENSITY_CLIP)
        treated = ds.d == 1.0
        losses["mu1_rmse"] = oof_loss(
            "regression", ds.y[treated], preds["mu1"][treated]
        )
        losses["mu0_rmse"] = oof_loss(
            "regression", ds.y[~treated], preds["mu0"][~treated]
        )
        losses["pi_logloss"] = oof_loss("classification", ds.d, pi)
        nuis = NuisanceFit(
            kind="binary", mu1=preds["mu1"], mu0=preds["mu0"], pi=pi, losses=losses
        )
    else:
        losses["g_rmse"] = oof_loss("regression", ds.y, preds["g"])
        losses["m_rmse"] = oof_loss("regression", ds.d, preds["m"])
        nuis = NuisanceFit(kind="continuous", g=preds["g"], m=preds["m"], losses=losses)
    return CrossfitResult(
        nuis=nuis, folds=folds, learner_kind=learner, details=details
    )


@dataclass
class DmlResult:
    """Effect curve plus everything used to build it."""

    curve: CmeCurve
    projector: ProjectorFit
    signal: SignalVector
    band: BandResult | None = None
    crossfit: CrossfitResult | None = None
    extras: dict = field(default_factory=dict)


_SIGNAL_BUILDERS = {
    "aipw": aipw_signal,
    "ipw": ipw_signal,
    "outcome": outcome_signal,
}


def _resolve_smoother(
    ds: Dataset, smoother: SmootherSpec | None, moderator: str
) -> SmootherSpec:
    if smoother is not None and smoother.method == "discrete":
        return smoother
    discrete = (
        moderator == "discrete"
        or (
            moderator == "auto"
            and len(np.unique(ds.x)) <= DISCRETE_MODERATOR_MAX_LEVELS
        )
    )
    if discrete:
        base = smoother or SmootherSpec()
        return SmootherSpec(
            method="discrete",
            df=base.df,
            degree=base.degree,
            span=base.span,
            span_grid=base.span_grid,
            kernel=base.kernel,
            cv_folds=base.cv_folds,
        )
    return smoother or SmootherSpec()


def _curve_from_band(
    band: BandResult, method: str, n: int, alpha: float, extras: dict
) -> CmeCurve:
    curve = CmeCurve(
        grid=band.grid,
        theta=band.theta,
        se=band.se,
        ci_lower=band.point_lower,
        ci_upper=band.point_upper,
        method=method,
        n=n,
        alpha=alpha,
        flags=dict(band.flags),
        extras=extras,
    )
    if band.has_uniform():
        attach_bands(curve, band.unif_lower, band.unif_upper)
    return curve


def dml_binary_cme(
    ds: Dataset,
    grid: np.ndarray | None = None,
    learner: str = "post_lasso",
    k: int = 5,
    seed: int = 0,
    alpha: float = 0.05,
    signal: Literal["aipw", "ipw", "outcome"] = "aipw",
    smoother: SmootherSpec | None = None,
    inference: Literal["multiplier", "sandwich"] = "multiplier",
    n_boot: int = 1000,
    tuning: Literal["global", "per_fold"] = "global",
    moderator: Literal["auto", "continuous", "discrete"] = "auto",
    params: dict | None = None,
    oracle: dict | None = None,
    features: Literal["auto", "raw", "expanded"] = "auto",
    learner_t: str | None = None,
    params_t: dict | None = None,
) -> DmlResult:
    """Cross-fitted effect curve for a binary treatment.

    A moderator with at most 10 distinct values is treated as discrete
    (group means of the signal per value) unless overridden.
    """
    if ds.treatment_type != "binary":
        raise ValueError("binary treatment required; use dml_continuous_cme")
    cf = crossfit_nuisances(
        ds, learner=learner, k=k, seed=seed, tuning=tuning, params=params,
        oracle=oracle, features=features, learner_t=learner_t, params_t=params_t,
    )
    sig = _SIGNAL_BUILDERS[signal](ds, cf.nuis)
    spec = _resolve_smoother(ds, smoother, moderator)
    if grid is None and spec.method != "discrete":
        grid = default_grid(ds.x)
    proj = project_signal(
        sig.values, ds.x, spec, grid=grid, seed=derive_seed(seed, 7)
    )
    if inference == "multiplier" and proj.method != "loess":
        band = multiplier_band(proj, alpha=alpha, n_boot=n_boot, seed=derive_seed(seed, 11))
    else:
        band = sandwich_band(proj, alpha=alpha)
    curve = _curve_from_band(
        band, f"dml_{signal}", ds.n,
        alpha, {"losses": cf.nuis.losses, "learner": learner},
    )
    return DmlResult(curve=curve, projector=proj, signal=sig, band=band, crossfit=cf)


def dml_continuous_cme(
    ds: Dataset,
    grid: np.ndarray | None = None,
    learner: str = "post_lasso",
    k: int = 5,
    seed: int = 0,
    alpha: float = 0.05,
    smoother: SmootherSpec | None = None,
    inference: Literal["multiplier", "sandwich"] = "multiplier",
    n_boot: int = 1000,
    tuning: Literal["global", "per_fold"] = "global",
    moderator: Literal["auto", "continuous", "discrete"] = "auto",
    params: dict | None = None,
    oracle: dict | None = None,
    features: Literal["auto", "raw", "expanded"] = "auto",
    learner_t: str | None = None,
    params_t: dict | None = None,
) -> DmlResult:
    """Cross-fitted effect curve for a continuous treatment.

    Partials the conditional means out of Y and D, then projects the
    outcome residual on moderator splines scaled by the treatment
    residual. Near-constant treatment residuals (variance below 1e-10)
    raise :class:`DegenerateTreatmentResiduals`.
    """
    cf = crossfit_nuisances(
        ds, learner=learner, k=k, seed=seed, tuning=tuning, params=params,
        oracle=oracle, features=features, learner_t=learner_t, params_t=params_t,
    )
    y_tilde = ds.y - cf.nuis.g
    d_tilde = ds.d - cf.nuis.m
    if float(np.var(d_tilde)) < 1e-10:
        raise DegenerateTreatmentResiduals(
            "treatment residual variance below 1e-10"
        )
    sig = SignalVector(
        values=y_tilde, kind="plrm_residuals", y_tilde=y_tilde, d_tilde=d_tilde
    )
    spec = _resolve_smoother(ds, smoother, moderator)
    if grid is None and spec.method != "discrete":
        grid = default_grid(ds.x)
    proj = project_residuals(
        y_tilde, d_tilde, ds.x, spec, grid=grid, seed=derive_seed(seed, 7)
    )
    if inference == "multiplier" and proj.method != "loess":
        band = multiplier_band(proj, alpha=alpha, n_boot=n_boot, seed=derive_seed(seed, 11))
    else:
        band = sandwich_band(proj, alpha=alpha)
    curve = _curve_from_band(
        band, "dml_plrm", ds.n, alpha, {"losses": cf.nuis.losses, "learner": learner},
    )
    return DmlResult(curve=curve, projector=proj, signal=sig, band=band, crossfit=cf)


def _frozen_spec(spec: SmootherSpec, span: float | None) -> SmootherSpec:
    if spec.method != "loess" or spec.span is not None or span is None:
        return spec
    return SmootherSpec(
        method=spec.method, df=spec.df, degree=spec.degree, span=span,
        span_grid=spec.span_grid, kernel=spec.kernel, cv_folds=spec.cv_folds,
    )


def po_lasso_cme(
    ds: Dataset,
    grid: np.ndarray | None = None,
    seed: int = 0,
    alpha: float = 0.05,
    smoother: SmootherSpec | None = None,
    inference: Literal["bootstrap", "sandwich"] = "bootstrap",
    n_boot: int = 2000,
    moderator: Literal["auto", "continuous", "discrete"] = "auto",
    features: Literal["auto", "raw", "expanded"] = "auto",
) -> DmlResult:
    """Partialling-out Lasso effect curve, no sample splitting.

    Post-Lasso fits of E[Y|x,z] and E[D|x,z] on the spline-expanded design
    produce the residual pair; the projection is as in the cross-fitted
    continuous pipeline. Bootstrap replications re-run variable selection
    at the penalties frozen from the original fit, with frozen spline
    knots (or loess span).
    """
    cf = crossfit_nuisances(
        ds, learner="post_lasso", k=1, seed=seed, tuning="global",
        features=features,
    )
    y_tilde = ds.y - cf.nuis.g
    d_tilde = ds.d - cf.nuis.m
    if float(np.var(d_tilde)) < 1e-10:
        raise DegenerateTreatmentResiduals("treatment residual variance below 1e-10")
    sig = SignalVector(
        values=y_tilde, kind="plrm_residuals", y_tilde=y_tilde, d_tilde=d_tilde
    )
    spec = _resolve_smoother(ds, smoother, moderator)
    if grid is None and spec.method != "discrete":
        grid = default_grid(ds.x)
    proj = project_residuals(
        y_tilde, d_tilde, ds.x, spec, grid=grid, seed=derive_seed(seed, 7)
    )
    frozen = _frozen_spec(spec, proj.span_used)
    lambdas = cf.details.get("lambdas", {})

    def estimator(ds_b: Dataset) -> np.ndarray:
        Fb, _ = _feature_matrix(ds_b, "post_lasso", features)
        g_fit = fit_learner(
            LearnerSpec(kind="post_lasso", task="regression",
                        params={"lambda": lambdas.get("g")}),
            Fb, ds_b.y, seed=derive_seed(seed, 21),
        )
        m_fit = fit_learner(
            LearnerSpec(kind="post_lasso", task="regression",
                        params={"lambda": lambdas.get("m")}),
            Fb, ds_b.d, seed=derive_seed(seed, 22),
        )
        yt = ds_b.y - g_fit.predict(Fb)
        dt = ds_b.d - m_fit.predict(Fb)
        proj_b = project_residuals(
            yt, dt, ds_b.x, frozen, grid=proj.grid, seed=seed, basis=proj.basis,
        )
        return proj_b.theta

    if inference == "bootstrap":
        band = nonparam_bootstrap_band(
            ds, estimator, proj.grid, proj.theta, alpha=alpha, n_boot=n_boot,
            seed=derive_seed(seed, 13),
        )
        method_band = band
    else:
        method_band = sandwich_band(proj, alpha=alpha)
    curve = _curve_from_band(
        method_band, "po_lasso", ds.n, alpha,
        {"losses": cf.nuis.losses, "lambdas": lambdas},
    )
    return DmlResult(
        curve=curve, projector=proj, signal=sig, band=method_band, crossfit=cf
    )


def aipw_lasso_cme(
    ds: Dataset,
    grid: np.ndarray | None = None,
    seed: int = 0,
    alpha: float = 0.05,
    signal: Literal["aipw", "ipw", "outcome"] = "aipw",
    smoother: SmootherSpec | None = None,
    inference: Literal["bootstrap", "sandwich"] = "bootstrap",
    n_boot: int = 2000,
    moderator: Literal["auto", "continuous", "discrete"] = "auto",
    features: Literal["auto", "raw", "expanded"] = "auto",
) -> DmlResult:
    """Full-sample post-Lasso signal estimator for a binary treatment.

    Outcome regressions are post-Lasso fits per arm on the expanded
    design; the propensity is a post-Lasso logit. No sample splitting.
    Bootstrap bands re-run selection at the frozen penalties and reuse
    the original spline knots.
    """
    if ds.treatment_type != "binary":
        raise ValueError("binary treatment required")
    cf = crossfit_nuisances(
        ds, learner="post_lasso", k=1, seed=seed, tuning="global",
        features=features,
    )
    sig = _SIGNAL_BUILDERS[signal](ds, cf.nuis)
    spec = _resolve_smoother(ds, smoother, moderator)
    if grid is None and spec.method != "discrete":
        grid = default_grid(ds.x)
    proj = project_signal(
        sig.values, ds.x, spec, grid=grid, seed=derive_seed(seed, 7)
    )
    frozen = _frozen_spec(spec, proj.span_used)
    lambdas = cf.details.get("lambdas", {})

    def boot_estimator(ds_b: Dataset) -> np.ndarray:
        Fb, _ = _feature_matrix(ds_b, "post_lasso", features)
        treated = ds_b.d == 1.0
        task_y = "classification" if ds_b.outcome_type == "binary" else "regression"
        mu1_fit = fit_learner(
            LearnerSpec(kind="post_lasso", task=task_y,
                        params={"lambda": lambdas.get("mu1")}),
            Fb[treated], ds_b.y[treated], seed=derive_seed(seed, 31),
        )
        mu0_fit = fit_learner(
            LearnerSpec(kind="post_lasso", task=task_y,
                        params={"lambda": lambdas.get("mu0")}),
            Fb[~treated], ds_b.y[~treated], seed=derive_seed(seed, 32),
        )
        pi_fit = fit_learner(
            LearnerSpec(kind="post_lasso", task="classification",
                        params={"lambda": lambdas.get("pi")}),
            Fb, ds_b.d, seed=derive_seed(seed, 33),
        )
        nuis_b = NuisanceFit(
            kind="binary",
            mu1=mu1_fit.predict(Fb),
            mu0=mu0_fit.predict(Fb),
            pi=clip_propensity(pi_fit.predict(Fb), PROPENSITY_CLIP),
        )
        sig_b = _SIGNAL_BUILDERS[signal](ds_b, nuis_b)
        proj_b = project_signal(
            sig_b.values, ds_b.x, frozen, grid=proj.grid, seed=seed,
            basis=proj.basis,
        )
        return proj_b.theta

    if inference == "bootstrap":
        band = nonparam_bootstrap_band(
            ds, boot_estimator, proj.grid, proj.theta, alpha=alpha,
            n_boot=n_boot, seed=derive_seed(seed, 13),
        )
    else:
        band = sandwich_band(proj, alpha=alpha)
    curve = _curve_from_band(
        band, f"aipw_lasso_{signal}", ds.n, alpha,
        {"losses": cf.nuis.losses, "lambdas": lambdas},
    )
    return DmlResult(curve=curve, projector=proj, signal=sig, band=band, crossfit=cf)
