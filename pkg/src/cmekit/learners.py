"""Nuisance learners behind a uniform fit/predict interface.

Four kinds:

- ``post_lasso``: coordinate-descent Lasso with cross-validated penalty,
  then an unpenalized refit on the selected columns. Callers pass the
  feature matrix they want selection over (typically a spline-expanded
  design). ``params["lambda"]`` pins the penalty, which bootstrap
  replications use to re-run selection without re-tuning.
- ``random_forest`` / ``hist_gbm``: scikit-learn ensembles, seeded and
  single-threaded so fits are bit-reproducible. Classification predicts
  probabilities of the positive class.
- ``oracle``: wraps a supplied function of the feature matrix; a test seam
  for engine-equivalence and coverage studies, never exposed on the CLI.

``grid_search_cv`` tunes tree hyperparameters by k-fold loss with ties
broken by grid order. Defaults follow fixed normative settings: random
forests use 100 unrestricted-depth trees (classification subsamples
ceil(sqrt(p)) features per split); gradient boosting uses learning rate
0.1, 100 iterations, 31 leaf nodes, 255-bin histograms, no early stopping.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from sklearn.ensemble import (
    HistGradientBoostingClassifier,
    HistGradientBoostingRegressor,
    RandomForestClassifier,
    RandomForestRegressor,
)

from .dataset import assign_folds
from .numerics import lasso_cd, post_selection_refit, predict_refit
from .rng import derive_seed

__all__ = [
    "LearnerSpec",
    "FittedLearner",
    "fit",
    "grid_search_cv",
    "oof_loss",
    "DegenerateTarget",
    "RF_GRID",
    "HGB_GRID",
]

LEARNER_KINDS = ("post_lasso", "random_forest", "hist_gbm", "oracle")

RF_GRID = {
    "n_estimators": [100, 300],
    "max_depth": [None, 5, 10],
    "min_samples_split": [2, 10],
    "min_samples_leaf": [1, 5],
    "max_features": [1.0, 0.8],
    "bootstrap": [True, False],
}

HGB_GRID = {
    "learning_rate": [0.01, 0.1],
    "max_iter": [100, 200],
    "max_leaf_nodes": [31, 127],
    "max_depth": [None, 3, 5],
    "min_samples_leaf": [5, 20],
    "l2_regularization": [0.0, 1.0],
    "max_features": [1.0, 0.8],
}

PROB_CLIP = 1e-12

_ALLOWED_PARAMS = {
    "post_lasso": {"lambda"},
    "random_forest": set(RF_GRID),
    "hist_gbm": set(HGB_GRID),
    "oracle": set(),
}


class DegenerateTarget(ValueError):
    """The target carries no variation (constant value / single class)."""


@dataclass(frozen=True)
class LearnerSpec:
    """What to fit: learner kind, task, and hyperparameter overrides."""

    kind: str
    task: Literal["regression", "classification"]
    params: dict = field(default_factory=dict)
    oracle_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind == "oracle" and self.oracle_fn is None:
            raise ValueError("oracle learner requires oracle_fn")
        allowed = _ALLOWED_PARAMS[self.kind]
        extra = sorted(set(self.params) - allowed)
        if extra:
            raise ValueError(
                f"unknown params for {self.kind}: {extra}; allowed: {sorted(allowed)}"
            )


@dataclass
class FittedLearner:
    """A fitted learner; ``predict`` returns means (regression) or
    positive-class probabilities (classification)."""

    spec: LearnerSpec
    predict: Callable[[np.ndarray], np.ndarray]
    params: dict
    model: object | None = None


def _check_training_data(X: np.ndarray, y: np.ndarray, task: str) -> None:
    if len(y) != X.shape[0]:
        raise ValueError("X and y row counts differ")
    if X.shape[0] < 10:
        raise ValueError("need at least 10 rows to fit a learner")
    if task == "classification":
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("classification requires a 0/1 target")
        if len(np.unique(y)) < 2:
            raise DegenerateTarget("single-class target")


def _fit_post_lasso(
    spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int
) -> FittedLearner:
    family = "gaussian" if spec.task == "regression" else "binomial"
    fixed_lambda = spec.params.get("lambda")
    if fixed_lambda is not None:
        path = lasso_cd(
            X, y, family=family, lambdas=np.array([fixed_lambda]),
            k_cv=2, seed=derive_seed(seed, 1),
        )
        lam = float(fixed_lambda)
    else:
        path = lasso_cd(X, y, family=family, seed=derive_seed(seed, 1))
        lam = path.lambda_min
    selected = path.selected_at(lam)
    refit = post_selection_refit(X, y, selected, family=family)
    params = {"lambda": lam, "selected": selected}

    def predict(Xnew: np.ndarray) -> np.ndarray:
        return predict_refit(refit, Xnew, family=family)

    return FittedLearner(spec=spec, predict=predict, params=params, model=refit)


def _rf_model(spec: LearnerSpec, n_features: int, seed: int):
    params = {
        "n_estimators": 100,
        "max_depth": None,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "bootstrap": True,
    }
    if spec.task == "classification":
        params["max_features"] = int(np.ceil(np.sqrt(n_features)))
    else:
        params["max_features"] = 1.0
    params.update(
        {k: v for k, v in spec.params.items() if k in RF_GRID or k == "max_features"}
    )
    cls = (
        RandomForestClassifier
        if spec.task == "classification"
        else RandomForestRegressor
    )
    # sklearn restricts random_state to [0, 2**32 - 1]
    return cls(random_state=seed % 2**32, n_jobs=1, **params), params


def _hgb_model(spec: LearnerSpec, seed: int):
    params = {
        "learning_rate": 0.1,
        "max_iter": 100,
        "max_leaf_nodes": 31,
    }
    params.update({k: v for k, v in spec.params.items() if k in HGB_GRID})
    cls = (
        HistGradientBoostingClassifier
        if spec.task == "classification"
        else HistGradientBoostingRegressor
    )
    model = cls(
        random_state=seed % 2**32,
        max_bins=255,
        early_stopping=False,
        **params,
    )
    return model, params


def fit(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int = 0) -> FittedLearner:
    """Fit one learner. Raises on fewer than 10 rows or a single-class
    classification target; a constant regression target yields the constant
    predictor."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if spec.kind == "oracle":
        if len(y) != X.shape[0]:
            raise ValueError("X and y row counts differ")
        fn = spec.oracle_fn
        return FittedLearner(
            spec=spec, predict=lambda Xnew: np.asarray(fn(np.asarray(Xnew))), params={}
        )
    _check_training_data(X, y, spec.task)
    if spec.task == "regression" and np.all(y == y[0]):
        # constant target: every learner reduces to the constant predictor
        const = float(y[0])
        return FittedLearner(
            spec=spec,
            predict=lambda Xnew: np.full(np.asarray(Xnew).shape[0], const),
            params={"constant": const},
        )
    if spec.kind == "post_lasso":
        return _fit_post_lasso(spec, X, y, seed)
    if spec.kind == "random_forest":
        model, params = _rf_model(spec, X.shape[1], seed)
    else:
        model, params = _hgb_model(spec, seed)
    if spec.task == "classification":
        model.fit(X, y.astype(np.int64))
        classes = list(model.classes_)
        pos = classes.index(1)

        def predict(Xnew: np.ndarray) -> np.ndarray:
            return model.predict_proba(np.asarray(Xnew, dtype=np.float64))[:, pos]

    else:
        model.fit(X, y)

        def predict(Xnew: np.ndarray) -> np.ndarray:
            return model.predict(np.asarray(Xnew, dtype=np.float64))

    return FittedLearner(spec=spec, predict=predict, params=params, model=model)


def oof_loss(task: str, y: np.ndarray, pred: np.ndarray) -> float:
    """RMSE for regression; log-loss (predictions clipped to
    [1e-12, 1 - 1e-12]) for classification. A 0.5 prediction on any binary
    target scores ln 2."""
    y = np.asarray(y, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if len(y) != len(pred):
        raise ValueError("y and pred lengths differ")
    if task == "regression":
        return float(np.sqrt(np.mean((y - pred) ** 2)))
    if task == "classification":
        p = np.clip(pred, PROB_CLIP, 1.0 - PROB_CLIP)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    raise ValueError(f"unknown task {task!r}")


def grid_search_cv(
    spec: LearnerSpec,
    X: np.ndarray,
    y: np.ndarray,
    k: int = 5,
    seed: int = 0,
    grid: dict | None = None,
) -> tuple[LearnerSpec, list[dict]]:
    """Tune tree hyperparameters by k-fold out-of-fold loss.

    Candidates are enumerated in grid order (itertools.product over the
    listed values); the first candidate attaining the minimal loss wins.
    Returns the winning spec and the full loss table. ``post_lasso`` and
    ``oracle`` specs pass through unchanged (their tuning is internal).
    """
    if spec.kind in ("post_lasso", "oracle"):
        return spec, []
    if grid is None:
        grid = RF_GRID if spec.kind == "random_forest" else HGB_GRID
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    _check_training_data(X, y, spec.task)
    folds = assign_folds(X.shape[0], k, seed)
    keys = list(grid.keys())
    table: list[dict] = []
    best_loss = np.inf
    best_params: dict | None = None
    for combo in itertools.product(*(grid[key] for key in keys)):
        params = dict(zip(keys, combo))
        cand = LearnerSpec(
            kind=spec.kind, task=spec.task, params={**spec.params, **params}
        )
        pred = np.empty(len(y))
        for fold in range(k):
            tr = folds.train_rows(fold)
            te = folds.test_rows(fold)
            fitted = fit(cand, X[tr], y[tr], seed=derive_seed(seed, fold))
            pred[te] = fitted.predict(X[te])
        loss = oof_loss(spec.task, y, pred)
        table.append({**params, "loss": loss})
        if loss < best_loss:
            best_loss = loss
            best_params = params
    assert best_params is not None
    return (
        LearnerSpec(
            kind=spec.kind, task=spec.task, params={**spec.params, **best_params}
        ),
        table,
    )
