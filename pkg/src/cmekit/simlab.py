"""Simulation designs with known effect curves, plus a benchmark runner.

Each generator is a pure function of ``(id, n, seed)`` and returns, next to
the sample itself, the true effect curve, the true nuisance functions, and
the moderator density, so estimates can be scored against ground truth.
Binary designs follow ``Y = theta(X) D + g(V) + eps`` with a logistic
propensity; the continuous design follows the partially linear form
``Y = theta(X) D + g(V) + eps`` with ``D = m(V) + nu``.

The benchmark runner times each estimator call (excluding data generation)
and scores curves with a density-weighted RMSE over the evaluation grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .classic_estimators import CmeCurve, binning_cme, kernel_cme, linear_cme
from .dataset import Dataset, make_dataset
from .dml_engine import aipw_lasso_cme, dml_binary_cme, dml_continuous_cme, po_lasso_cme
from .rng import derive_seed, make_rng
from .signals import NuisanceFit

__all__ = [
    "DGP_IDS",
    "ESTIMATORS",
    "DGPSpec",
    "SimData",
    "BenchRow",
    "generate",
    "true_nuisance_fit",
    "cme_from_table",
    "weighted_rmse",
    "run_bench",
    "write_bench_csv",
]

DGP_IDS = (
    "ch3_ex1",
    "ch3_ex2",
    "ch3_ex3",
    "ch3_ex4cont",
    "dgp1",
    "dgp2",
    "dgp3",
    "dgp4",
)

ESTIMATORS = ("linear", "binning", "kernel", "aipw_lasso", "po_lasso", "dml")

_SQRT3 = float(np.sqrt(3.0))


@dataclass(frozen=True)
class DGPSpec:
    """A simulation cell: design id, sample size, seed."""

    id: str
    n: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.id not in DGP_IDS:
            raise ValueError(f"unknown dgp id {self.id!r}; choose from {DGP_IDS}")
        if self.n < 10:
            raise ValueError("need n >= 10")


@dataclass
class SimData:
    """A generated sample with its ground truth.

    ``theta``, ``density`` map moderator values to the true effect and the
    moderator density. ``baseline`` is ``g(x, z) = E[Y | D=0, V]`` (for the
    continuous design, the additive part free of D), ``treatment_mean`` is
    ``pi(x, z)`` for binary treatments and ``E[D | V]`` otherwise. ``truth``
    holds these functions evaluated at the sample rows.
    """

    dataset: Dataset
    theta: Callable[[np.ndarray], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]
    baseline: Callable[[np.ndarray, np.ndarray], np.ndarray]
    treatment_mean: Callable[[np.ndarray, np.ndarray], np.ndarray]
    support: tuple[float, float]
    spec: DGPSpec
    truth: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def _uniform_density(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    height = 1.0 / (hi - lo)

    def density(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where((x >= lo) & (x <= hi), height, 0.0)

    return density


def _bernoulli(rng: np.random.Generator, pi: np.ndarray) -> np.ndarray:
    return (rng.random(len(pi)) < pi).astype(np.float64)


# ---------------------------------------------------------------------------
# Designs with theta(x) = 1 - x^2, moderator Unif[-2, 2]


def _ch3_theta(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - x**2


def _gen_ch3_ex1(n: int, rng: np.random.Generator):
    x = rng.uniform(-2.0, 2.0, n)
    z = rng.uniform(0.0, 1.0, (n, 2))

    def baseline(x, z):
        return 1.0 + np.asarray(x, dtype=np.float64) + z[:, 0]

    def propensity(x, z):
        return expit(0.5 * np.asarray(x, dtype=np.float64) + 0.5 * z[:, 0])

    pi = propensity(x, z)
    d = _bernoulli(rng, pi)
    y = baseline(x, z) + _ch3_theta(x) * d + rng.standard_normal(n)
    return x, z, d, y, baseline, propensity


def _gen_ch3_ex23(n: int, rng: np.random.Generator, p: int):
    x = rng.uniform(-2.0, 2.0, n)
    z = rng.uniform(0.0, 1.0, (n, p))

    def baseline(x, z):
        return (
            1.0
            + np.asarray(x, dtype=np.float64)
            + z[:, 0] ** 2
            + np.sin(z[:, 1])
            + 0.5 * z[:, 0] * np.exp(z[:, 2])
        )

    def propensity(x, z):
        x = np.asarray(x, dtype=np.float64)
        return expit(-1.0 + 0.5 * z[:, 0] + np.abs(x) - x * z[:, 1] + z[:, 2] ** 2)

    pi = propensity(x, z)
    d = _bernoulli(rng, pi)
    y = baseline(x, z) + _ch3_theta(x) * d + rng.standard_normal(n)
    return x, z, d, y, baseline, propensity


def _gen_ch3_ex4cont(n: int, rng: np.random.Generator):
    x = rng.uniform(-2.0, 2.0, n)
    z = rng.standard_normal((n, 4))

    def baseline(x, z):
        x = np.asarray(x, dtype=np.float64)
        return (
            1.0
            + 1.5 * x
            + 2.0 * x * np.exp(1.0 + z[:, 0])
            + 2.0 * (z[:, 1] > 0.0) * z[:, 1]
        )

    def treatment_mean(x, z):
        return 0.5 * z[:, 0] + np.asarray(x, dtype=np.float64) ** 2

    d = treatment_mean(x, z) + rng.standard_normal(n)
    y = baseline(x, z) + _ch3_theta(x) * d + rng.standard_normal(n)
    return x, z, d, y, baseline, treatment_mean


# ---------------------------------------------------------------------------
# Designs with theta(x) = x^2, covariates Unif(-sqrt 3, sqrt 3)


def _quad_theta(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) ** 2


def _gen_quadratic(n: int, rng: np.random.Generator, p: int, baseline, propensity):
    x = rng.uniform(-_SQRT3, _SQRT3, n)
    z = rng.uniform(-_SQRT3, _SQRT3, (n, p))
    pi = propensity(x, z)
    d = _bernoulli(rng, pi)
    y = baseline(x, z) + _quad_theta(x) * d + rng.standard_normal(n)
    return x, z, d, y


def _dgp12_propensity(x, z):
    return expit(0.5 * np.asarray(x, dtype=np.float64) + 0.5 * z[:, 0])


def _dgp1_baseline(x, z):
    return 1.0 + np.asarray(x, dtype=np.float64) + 0.5 * z[:, 0]


def _dgp2_baseline(x, z):
    return 1.0 + np.asarray(x, dtype=np.float64) + np.exp(2.0 * z[:, 0] + 2.0)


def _dgp3_baseline(x, z):
    x = np.asarray(x, dtype=np.float64)
    # np.sinc(t) = sin(pi t) / (pi t), so sin(u)/u = np.sinc(u / pi).
    return (
        1.0
        + x
        + np.exp(2.0 * x + 2.0)
        + 3.0 * np.sin(x + z[:, 0])
        + 2.0 * x * z[:, 1]
        + z[:, 2] * (z[:, 2] > 0.0)
        - 4.0 * np.sinc(z[:, 3] / np.pi)
        + 2.0 * z[:, 2] ** 2 * z[:, 3]
    )


def _dgp3_propensity(x, z):
    x = np.asarray(x, dtype=np.float64)
    index = (
        0.25
        + x
        - x**2
        - z[:, 0] ** 2
        + 2.0 * x * z[:, 0] * z[:, 1]
        - expit(z[:, 0] + z[:, 2])
        + 2.0 * z[:, 1] ** 2 * np.cos(z[:, 3])
    )
    return expit(index)


def _dgp4_regions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r1 = (z[:, 0] < 1.0) & (z[:, 1] < 0.0)
    r2 = (z[:, 0] < 1.0) & (z[:, 1] >= 0.0)
    return r1, r2, ~(r1 | r2)


def _dgp4_f2(z1: np.ndarray) -> np.ndarray:
    # Step-plus-slope pieces with breaks at -1, 0, 1 (jumps of -1, 2.5, -5.5).
    conds = [z1 < -1.0, z1 < 0.0, z1 < 1.0]
    vals = [2.0 + z1, -1.0 - z1, 1.5 + z1]
    return np.select(conds, vals, default=-2.0 - z1)


def _dgp4_baseline(x, z):
    x = np.asarray(x, dtype=np.float64)
    r1, r2, _ = _dgp4_regions(z)
    g = 1.0 + x + _dgp4_f2(z[:, 0])
    g = np.where(r1, 2.0 + x**2 + 2.0 * z[:, 0] * z[:, 1] + 3.0 * np.sin(x + z[:, 0]), g)
    g = np.where(r2, -1.0 + 2.0 * np.abs(x * z[:, 0]) + z[:, 1] ** 3, g)
    return g


def _dgp4_propensity(x, z):
    x = np.asarray(x, dtype=np.float64)
    r1, r2, _ = _dgp4_regions(z)
    index = x - x**2 + x * z[:, 0] - 2.0 * np.sin(x + z[:, 0])
    index = index + np.where(r1, 2.0 * np.cos(2.0 * x), 0.0)
    index = index + np.where(r2, 2.0 * x * z[:, 0] * z[:, 1], 0.0)
    return expit(index)


def generate(spec: DGPSpec) -> SimData:
    """Draw one sample; bit-identical for equal ``(id, n, seed)``."""
    rng = make_rng(spec.seed)
    n = spec.n
    treatment_type: Literal["binary", "continuous"] = "binary"
    extras: dict = {}
    if spec.id == "ch3_ex1":
        x, z, d, y, baseline, treat = _gen_ch3_ex1(n, rng)
        theta, support = _ch3_theta, (-2.0, 2.0)
    elif spec.id == "ch3_ex2":
        x, z, d, y, baseline, treat = _gen_ch3_ex23(n, rng, p=3)
        theta, support = _ch3_theta, (-2.0, 2.0)
    elif spec.id == "ch3_ex3":
        x, z, d, y, baseline, treat = _gen_ch3_ex23(n, rng, p=8)
        theta, support = _ch3_theta, (-2.0, 2.0)
    elif spec.id == "ch3_ex4cont":
        x, z, d, y, baseline, treat = _gen_ch3_ex4cont(n, rng)
        theta, support = _ch3_theta, (-2.0, 2.0)
        treatment_type = "continuous"
    else:
        baseline, treat, p = {
            "dgp1": (_dgp1_baseline, _dgp12_propensity, 1),
            "dgp2": (_dgp2_baseline, _dgp12_propensity, 1),
            "dgp3": (_dgp3_baseline, _dgp3_propensity, 4),
            "dgp4": (_dgp4_baseline, _dgp4_propensity, 4),
        }[spec.id]
        x, z, d, y = _gen_quadratic(n, rng, p, baseline, treat)
        theta, support = _quad_theta, (-_SQRT3, _SQRT3)
        if spec.id == "dgp4":
            r1, r2, r3 = _dgp4_regions(z)
            extras["region_shares"] = (
                float(r1.mean()),
                float(r2.mean()),
                float(r3.mean()),
            )
    ds = make_dataset(y, d, x, z, treatment_type=treatment_type)
    g_true = baseline(x, z)
    t_true = treat(x, z)
    theta_x = theta(x)
    truth = {"g": g_true, "theta_x": theta_x}
    if treatment_type == "binary":
        truth.update(pi=t_true, mu0=g_true, mu1=g_true + theta_x)
    else:
        truth.update(m=t_true)
    return SimData(
        dataset=ds,
        theta=theta,
        density=_uniform_density(*support),
        baseline=baseline,
        treatment_mean=treat,
        support=support,
        spec=spec,
        truth=truth,
        extras=extras,
    )


def true_nuisance_fit(sim: SimData) -> NuisanceFit:
    """The generator's own nuisances packaged for signal construction."""
    if sim.dataset.treatment_type == "binary":
        return NuisanceFit(
            kind="binary",
            mu1=sim.truth["mu1"],
            mu0=sim.truth["mu0"],
            pi=sim.truth["pi"],
        )
    return NuisanceFit(kind="continuous", g=sim.truth["g"], m=sim.truth["m"])


def cme_from_table(
    y0: np.ndarray,
    y1: np.ndarray,
    x: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Population effect curve from a complete potential-outcome table.

    Averages the unit effects ``y1 - y0`` within each moderator level using
    the supplied population weights. Returns ``(levels, theta)`` with levels
    sorted ascending.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    if not (len(y0) == len(y1) == len(x) == len(w)):
        raise ValueError("table columns must have equal length")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive total")
    tau = y1 - y0
    levels = np.unique(x)
    theta = np.array(
        [np.sum(w[x == v] * tau[x == v]) / np.sum(w[x == v]) for v in levels]
    )
    return levels, theta


def weighted_rmse(
    curve: CmeCurve,
    theta: Callable[[np.ndarray], np.ndarray],
    density: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Root mean squared curve error, density-weighted over the grid:
    sqrt( sum_j f(x_j) (theta_hat(x_j) - theta(x_j))^2 / sum_j f(x_j) )."""
    w = np.asarray(density(curve.grid), dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("density weights must be nonnegative with positive total")
    err = curve.theta - np.asarray(theta(curve.grid), dtype=np.float64)
    return float(np.sqrt(np.sum(w * err**2) / np.sum(w)))


# ---------------------------------------------------------------------------
# Benchmark runner


@dataclass
class BenchRow:
    """One benchmark cell. ``error`` is empty on success; on failure the
    metric fields are NaN and ``error`` records the reason."""

    dgp: str
    estimator: str
    learner: str
    n: int
    seed: int
    rmse_weighted: float = float("nan")
    runtime_ms: float = float("nan")
    mu1_loss: float = float("nan")
    mu0_loss: float = float("nan")
    pi_loss: float = float("nan")
    g_loss: float = float("nan")
    m_loss: float = float("nan")
    error: str = ""


_LOSS_FIELDS = {
    "mu1_rmse": "mu1_loss",
    "mu0_rmse": "mu0_loss",
    "pi_logloss": "pi_loss",
    "g_rmse": "g_loss",
    "m_rmse": "m_loss",
}


def _run_estimator(
    sim: SimData, estimator: str, learner: str, seed: int, alpha: float
) -> tuple[CmeCurve, dict]:
    ds = sim.dataset
    continuous = ds.treatment_type == "continuous"
    if estimator in ("linear", "binning", "kernel") and continuous:
        raise ValueError(f"estimator {estimator!r} requires a binary treatment")
    if estimator == "linear":
        return linear_cme(ds, alpha=alpha).curve, {}
    if estimator == "binning":
        return binning_cme(ds, alpha=alpha).curve, {}
    if estimator == "kernel":
        return kernel_cme(ds, alpha=alpha, seed=seed), {}
    if estimator == "aipw_lasso":
        if continuous:
            raise ValueError("aipw_lasso requires a binary treatment")
        res = aipw_lasso_cme(ds, seed=seed, alpha=alpha, inference="sandwich")
    elif estimator == "po_lasso":
        if not continuous:
            raise ValueError("po_lasso requires a continuous treatment")
        res = po_lasso_cme(ds, seed=seed, alpha=alpha, inference="sandwich")
    elif estimator == "dml":
        fn = dml_continuous_cme if continuous else dml_binary_cme
        res = fn(ds, learner=learner or "post_lasso", seed=seed, alpha=alpha)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return res.curve, dict(res.crossfit.nuis.losses)


def run_bench(
    dgps: Sequence[str],
    estimators: Sequence[str],
    ns: Sequence[int],
    seeds: Sequence[int],
    learners: Sequence[str] = ("post_lasso",),
    alpha: float = 0.05,
) -> list[BenchRow]:
    """Run the full ``dgp x estimator (x learner) x n x seed`` matrix.

    Within one ``(dgp, n, seed)`` every estimator sees the same sample, so
    rows are paired for head-to-head comparison; estimator-internal seeds
    are derived per cell. Learners vary only for the ``dml`` estimator.
    A failing cell is recorded with its reason and the run continues.
    """
    rows: list[BenchRow] = []
    for dgp in dgps:
        for n in ns:
            for seed in seeds:
                sim = generate(DGPSpec(id=dgp, n=int(n), seed=int(seed)))
                cells = []
                for estimator in estimators:
                    if estimator == "dml":
                        cells.extend(("dml", lr) for lr in learners)
                    else:
                        cells.append((estimator, ""))
                for j, (estimator, learner) in enumerate(cells):
                    row = BenchRow(
                        dgp=dgp, estimator=estimator, learner=learner,
                        n=int(n), seed=int(seed),
                    )
                    cell_seed = derive_seed(int(seed), 1000 + j)
                    t0 = time.perf_counter()
                    try:
                        curve, losses = _run_estimator(
                            sim, estimator, learner, cell_seed, alpha
                        )
                    except Exception as exc:  # noqa: BLE001 - recorded, run continues
                        row.error = f"{type(exc).__name__}: {exc}"
                        rows.append(row)
                        continue
                    row.runtime_ms = (time.perf_counter() - t0) * 1000.0
                    rmse = weighted_rmse(curve, sim.theta, sim.density)
                    if np.isfinite(rmse):
                        row.rmse_weighted = rmse
                    else:
                        row.error = "non-finite curve estimates"
                    for key, attr in _LOSS_FIELDS.items():
                        if key in losses:
                            setattr(row, attr, float(losses[key]))
                    rows.append(row)
    return rows


def bench_frame(rows: Sequence[BenchRow]) -> pd.DataFrame:
    return pd.DataFrame([vars(r) for r in rows])


def write_bench_csv(rows: Sequence[BenchRow], path: str | Path) -> None:
    bench_frame(rows).to_csv(path, index=False)
