"""Command-line front end.

Four subcommands: ``estimate`` (effect curve from a CSV), ``simulate``
(draw a benchmark design sample), ``bench`` (run a design x estimator
matrix), ``diagnose`` (overlap and identification report). Every run
writes ``manifest.json`` (resolved config, seeds, package versions)
beside its outputs, and outputs are byte-identical across reruns of the
same manifest.

Errors leave a machine-readable JSON line on stderr and exit with 2
(configuration), 3 (data), or 4 (numerical failure); anything else
unexpected exits 1.

A TOML config file (``--config``) may supply any flag value for any
subcommand under a section named after it (underscores for dashes);
explicit command-line flags take precedence:

.. code-block:: toml

    [estimate]
    data = "study.csv"
    y = "outcome"
    d = "treated"
    x = "age"
    z = ["income", "education"]
    estimator = "dml"
"""

from __future__ import annotations

import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import click
import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from . import __version__
from .classic_estimators import (
    CmeCurve,
    EmptyBin,
    attach_bands,
    binning_cme,
    kernel_cme,
    linear_cme,
)
from .dataset import DataError, Dataset, TrimSpec, ingest_csv, trim, write_csv
from .dml_engine import (
    DegenerateTreatmentResiduals,
    FoldMissingTreatmentArm,
    _feature_matrix,
    aipw_lasso_cme,
    dml_binary_cme,
    dml_continuous_cme,
    po_lasso_cme,
)
from .inference import BootstrapDegenerate, SingularJacobian, nonparam_bootstrap_band
from .learners import DegenerateTarget, LearnerSpec, grid_search_cv
from .learners import fit as fit_learner
from .numerics import DegenerateSample, NonConvergence, SingularDesign
from .signals import NoOverlapInCell, UnclippedPropensity
from .simlab import DGP_IDS, ESTIMATORS, DGPSpec, generate, run_bench, write_bench_csv
from .smoothing import InsufficientLocalData

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

HIST_BINS = 30
OVERLAP_BAND = (0.05, 0.95)

_MODEL_ALIASES = {"lasso": "post_lasso", "rf": "random_forest", "hgb": "hist_gbm"}
_ESTIMATORS = ("linear", "binning", "kernel", "dml", "aipw-lasso", "po-lasso")

_DATA_ERRORS = (DataError, FileNotFoundError, IsADirectoryError, PermissionError,
                UnicodeDecodeError)
_NUMERIC_ERRORS = (EmptyBin, SingularDesign, NonConvergence, DegenerateSample,
                   DegenerateTarget, FoldMissingTreatmentArm,
                   DegenerateTreatmentResiduals, BootstrapDegenerate,
                   SingularJacobian, InsufficientLocalData, NoOverlapInCell,
                   UnclippedPropensity, np.linalg.LinAlgError, FloatingPointError)


class CliError(Exception):
    """A reportable failure with an exit code and optional field name."""

    def __init__(self, exit_code: int, message: str, field: str | None = None):
        super().__init__(message)
        self.exit_code = exit_code
        self.field = field


def _emit_error(kind: str, message: str, exit_code: int, field: str | None = None):
    payload = {"error": kind, "message": message, "exit_code": exit_code}
    if field:
        payload["field"] = field
    click.echo(json.dumps(payload, sort_keys=True), err=True)
    sys.exit(exit_code)


def _guarded(fn):
    """Run a command body, translating exceptions to spec'd exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CliError as exc:
            _emit_error("ConfigError" if exc.exit_code == EXIT_CONFIG
                        else type(exc).__name__, str(exc), exc.exit_code, exc.field)
        except _DATA_ERRORS as exc:
            _emit_error(type(exc).__name__, str(exc), EXIT_DATA)
        except _NUMERIC_ERRORS as exc:
            _emit_error(type(exc).__name__, str(exc), EXIT_NUMERIC)
        except ValueError as exc:
            # option/data combinations rejected by library validation
            _emit_error(type(exc).__name__, str(exc), EXIT_CONFIG)
        except Exception as exc:  # noqa: BLE001 - last-resort reporting
            _emit_error(type(exc).__name__, str(exc), 1)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# config plumbing


def _load_toml(path: str | Path, what: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"{what} file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"invalid TOML in {what} file {path}: {exc}")


def _config_section(config_path: str | None, section: str) -> dict:
    if not config_path:
        return {}
    table = _load_toml(config_path, "config").get(section, {})
    if not isinstance(table, dict):
        raise CliError(EXIT_CONFIG, f"[{section}] must be a table", field=section)
    return table


def _resolve(cli_values: dict, section: dict, defaults: dict) -> dict:
    """Merge CLI flags over config-file values over defaults."""
    unknown = set(section) - set(defaults)
    if unknown:
        raise CliError(
            EXIT_CONFIG,
            f"unknown config key(s): {', '.join(sorted(unknown))}",
            field=sorted(unknown)[0],
        )
    out = dict(defaults)
    out.update({k: v for k, v in section.items()})
    out.update({k: v for k, v in cli_values.items() if v is not None})
    return out


def _require(cfg: dict, *fields: str) -> None:
    for f in fields:
        if cfg.get(f) in (None, ""):
            raise CliError(EXIT_CONFIG, f"missing required option --{f.replace('_', '-')}",
                           field=f)


def _versions() -> dict:
    vers = {"python": platform.python_version(), "cmekit": __version__}
    for dist in ("numpy", "scipy", "pandas", "scikit-learn", "numba", "click"):
        try:
            vers[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:  # pragma: no cover
            vers[dist] = "unknown"
    return vers


def _jsonsafe(obj):
    """Recursively convert to JSON-encodable values; non-finite -> None."""
    if isinstance(obj, dict):
        return {str(k): _jsonsafe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonsafe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonsafe(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(_jsonsafe(payload), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _write_manifest(out_dir: Path, command: str, cfg: dict, outputs: list[str]) -> None:
    manifest = {
        "schema_version": 1,
        "command": command,
        "config": _jsonsafe(cfg),
        "seeds": {"master": cfg.get("seed", 0)},
        "versions": _versions(),
        "outputs": outputs,
    }
    _write_json(out_dir / "manifest.json", manifest)


def _apply_threads(threads: int | None) -> None:
    if not threads:
        return
    if threads < 1:
        raise CliError(EXIT_CONFIG, "--threads must be a positive integer",
                       field="threads")
    try:
        import numba

        numba.set_num_threads(threads)
    except Exception:  # pragma: no cover - fewer cores than requested
        pass


# ---------------------------------------------------------------------------
# shared data loading


_DATA_DEFAULTS = {
    "data": None, "y": None, "d": None, "x": None, "z": None,
    "treat_type": "binary", "outcome_type": "continuous", "na_rm": True,
    "trim_x": None,
}


def _parse_z(z) -> list[str]:
    if z is None:
        return []
    if isinstance(z, str):
        return [c.strip() for c in z.split(",") if c.strip()]
    if isinstance(z, (list, tuple)):
        return [str(c) for c in z]
    raise CliError(EXIT_CONFIG, "z must be a comma-separated string or a list",
                   field="z")


def _load_dataset(cfg: dict) -> tuple[Dataset, dict]:
    _require(cfg, "data", "y", "d", "x")
    if cfg["treat_type"] not in ("binary", "continuous"):
        raise CliError(EXIT_CONFIG, "treat-type must be binary or continuous",
                       field="treat_type")
    if cfg["outcome_type"] not in ("continuous", "binary"):
        raise CliError(EXIT_CONFIG, "outcome-type must be continuous or binary",
                       field="outcome_type")
    column_map: dict = {"y": cfg["y"], "d": cfg["d"], "x": cfg["x"]}
    zcols = _parse_z(cfg["z"])
    if zcols:
        column_map["z"] = zcols
    ds, dropped = ingest_csv(
        cfg["data"], column_map, na_rm=bool(cfg["na_rm"]),
        treatment_type=cfg["treat_type"], outcome_type=cfg["outcome_type"],
    )
    info = {"rows": ds.n, "dropped_rows": dropped}
    if cfg.get("trim_x"):
        parts = str(cfg["trim_x"]).split(",")
        if len(parts) != 2:
            raise CliError(EXIT_CONFIG, "trim-x must be 'lower_q,upper_q'",
                           field="trim_x")
        lo, hi = float(parts[0]), float(parts[1])
        ds = trim(ds, TrimSpec(mode="moderator_quantile", lower_q=lo, upper_q=hi))
        info["rows_after_trim"] = ds.n
    return ds, info


def _arm_histograms(ds: Dataset, bins: int = HIST_BINS) -> dict:
    lo, hi = float(ds.x.min()), float(ds.x.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out: dict = {}
    if ds.treatment_type == "binary":
        arms = (("treated", ds.d == 1.0), ("control", ds.d == 0.0))
    else:
        arms = (("all", np.ones(ds.n, dtype=bool)),)
    for name, rows in arms:
        counts, _ = np.histogram(ds.x[rows], bins=edges)
        out[name] = {"bin_edges": edges.tolist(), "counts": counts.tolist()}
    return out


# ---------------------------------------------------------------------------
# CLI group


@click.group(name="cmekit")
@click.version_option(version=__version__, prog_name="cmekit")
@click.option("--config", "config_path", type=str, default=None,
              help="TOML file with per-subcommand option tables; flags override it.")
@click.option("--threads", type=int, default=None,
              help="Cap internal parallelism (numba threads).")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, threads: int | None) -> None:
    """Conditional-marginal-effect estimation, simulation, and diagnostics."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["threads"] = threads


# ---------------------------------------------------------------------------
# estimate


_ESTIMATE_DEFAULTS = {
    **_DATA_DEFAULTS,
    "estimator": None,
    "grid": 50,
    "nbins": 3,
    "cutoffs": None,
    "eval_rule": "median",
    "h0": None,
    "fully_moderated": True,
    "model_y": "lasso",
    "model_t": None,
    "k": 5,
    "seed": 0,
    "alpha": 0.05,
    "signal": "aipw",
    "boot": None,
    "uniform": False,
    "tuning": "global",
    "cv_grid": None,
    "out": ".",
}


def _parse_cutoffs(raw) -> np.ndarray | None:
    if raw in (None, ""):
        return None
    if isinstance(raw, str):
        vals = [float(v) for v in raw.split(",") if v.strip()]
    elif isinstance(raw, (list, tuple)):
        vals = [float(v) for v in raw]
    else:
        raise CliError(EXIT_CONFIG, "cutoffs must be a comma-separated list",
                       field="cutoffs")
    return np.asarray(vals, dtype=np.float64)


def _model_kind(alias: str | None, field: str) -> str:
    if alias is None:
        raise CliError(EXIT_CONFIG, f"missing --{field}", field=field)
    if alias not in _MODEL_ALIASES:
        raise CliError(
            EXIT_CONFIG,
            f"unknown model {alias!r}; choose from {sorted(_MODEL_ALIASES)}",
            field=field,
        )
    return _MODEL_ALIASES[alias]


def _tune_from_grid(ds: Dataset, kind: str, task: str, target: np.ndarray,
                    grids: dict, alias: str, k: int, seed: int) -> tuple[dict, list]:
    grid = grids.get(alias)
    if not grid or kind == "post_lasso":
        return {}, []
    F, _ = _feature_matrix(ds, kind, "auto")
    spec = LearnerSpec(kind=kind, task=task, params={})
    bad = {key: v for key, v in grid.items() if not isinstance(v, list)}
    if bad:
        raise CliError(EXIT_CONFIG,
                       f"cv-grid entries must be lists, got {sorted(bad)}",
                       field="cv_grid")
    best, table = grid_search_cv(spec, F, target, k=k, seed=seed, grid=grid)
    return dict(best.params), table


def _estimate_curve(ds: Dataset, cfg: dict) -> tuple[CmeCurve, dict]:
    """Dispatch to the configured estimator; returns (curve, manifest extras)."""
    est = cfg["estimator"]
    alpha = float(cfg["alpha"])
    seed = int(cfg["seed"])
    extras: dict = {}
    grid = None
    if est != "binning":
        size = int(cfg["grid"])
        if size < 2:
            raise CliError(EXIT_CONFIG, "grid must have at least 2 points",
                           field="grid")
        grid = np.linspace(float(ds.x.min()), float(ds.x.max()), size)

    if est == "linear":
        curve = linear_cme(ds, grid=grid, alpha=alpha).curve
    elif est == "binning":
        cutoffs = _parse_cutoffs(cfg["cutoffs"])
        res = binning_cme(ds, n_bins=int(cfg["nbins"]), eval_rule=cfg["eval_rule"],
                          alpha=alpha, cutoffs=cutoffs)
        curve = res.curve
        extras["edges"] = res.edges.tolist()
    elif est == "kernel":
        curve = kernel_cme(ds, grid=grid, h0=cfg["h0"], alpha=alpha,
                           fully_moderated=bool(cfg["fully_moderated"]), seed=seed)
    elif est == "aipw-lasso":
        n_boot = int(cfg["boot"] or 2000)
        res = aipw_lasso_cme(ds, grid=grid, seed=seed, alpha=alpha,
                             signal=cfg["signal"], n_boot=n_boot)
        curve = res.curve
        extras["lambdas"] = res.crossfit.details.get("lambdas", {})
    elif est == "po-lasso":
        n_boot = int(cfg["boot"] or 2000)
        res = po_lasso_cme(ds, grid=grid, seed=seed, alpha=alpha, n_boot=n_boot)
        curve = res.curve
        extras["lambdas"] = res.crossfit.details.get("lambdas", {})
    elif est == "dml":
        learner = _model_kind(cfg["model_y"], "model-y")
        learner_t = _model_kind(cfg["model_t"] or cfg["model_y"], "model-t")
        k = int(cfg["k"])
        n_boot = int(cfg["boot"] or 1000)
        grids = _load_toml(cfg["cv_grid"], "cv-grid") if cfg["cv_grid"] else {}
        params_y, table_y = _tune_from_grid(
            ds, learner, "regression" if ds.outcome_type == "continuous"
            else "classification", ds.y, grids,
            cfg["model_y"], k, seed,
        )
        t_task = "classification" if ds.treatment_type == "binary" else "regression"
        params_t, table_t = _tune_from_grid(
            ds, learner_t, t_task, ds.d, grids,
            cfg["model_t"] or cfg["model_y"], k, seed,
        )
        if grids:
            extras["cv_grid"] = grids
            extras["tuned_params"] = {"model_y": params_y, "model_t": params_t}
            extras["tuning_tables"] = {"model_y": table_y, "model_t": table_t}
        fn = dml_binary_cme if ds.treatment_type == "binary" else dml_continuous_cme
        kwargs = dict(grid=grid, learner=learner, learner_t=learner_t, k=k,
                      seed=seed, alpha=alpha, n_boot=n_boot, tuning=cfg["tuning"],
                      params=params_y or None, params_t=params_t or None)
        if ds.treatment_type == "binary":
            kwargs["signal"] = cfg["signal"]
        res = fn(ds, **kwargs)
        curve = res.curve
        extras["losses"] = res.crossfit.nuis.losses
    else:
        raise CliError(EXIT_CONFIG,
                       f"unknown estimator {est!r}; choose from {_ESTIMATORS}",
                       field="estimator")

    if cfg["uniform"] and est in ("linear", "binning", "kernel"):
        curve = _classic_uniform_band(ds, cfg, curve)
    return curve, extras


def _classic_uniform_band(ds: Dataset, cfg: dict, curve: CmeCurve) -> CmeCurve:
    """Nonparametric-bootstrap uniform band for the classic estimators,
    re-running the fit with frozen tuning (h0, bin edges) per replicate."""
    est = cfg["estimator"]
    alpha = float(cfg["alpha"])
    seed = int(cfg["seed"])
    n_boot = int(cfg["boot"] or 500)
    if est == "linear":
        def refit(ds_b: Dataset) -> np.ndarray:
            return linear_cme(ds_b, grid=curve.grid, alpha=alpha).curve.theta
    elif est == "binning":
        if cfg["eval_rule"] != "midpoint":
            raise CliError(
                EXIT_CONFIG,
                "uniform binning bands need --eval-rule midpoint "
                "(median eval points move across bootstrap resamples)",
                field="eval_rule",
            )
        inner = np.asarray(curve.extras["edges"][1:-1], dtype=np.float64)

        def refit(ds_b: Dataset) -> np.ndarray:
            res = binning_cme(ds_b, eval_rule="midpoint", alpha=alpha,
                              cutoffs=inner)
            return res.curve.theta
    else:
        h0 = float(curve.extras["h0"])

        def refit(ds_b: Dataset) -> np.ndarray:
            return kernel_cme(ds_b, grid=curve.grid, h0=h0, alpha=alpha,
                              fully_moderated=bool(cfg["fully_moderated"])).theta

    band = nonparam_bootstrap_band(ds, refit, curve.grid, curve.theta,
                                   alpha=alpha, n_boot=n_boot, seed=seed)
    return attach_bands(curve, band.unif_lower, band.unif_upper)


def _curve_frame(curve: CmeCurve):
    import pandas as pd

    nan = np.full(len(curve.grid), np.nan)
    return pd.DataFrame({
        "grid": curve.grid,
        "theta": curve.theta,
        "se": curve.se,
        "ci_lo": curve.ci_lower,
        "ci_hi": curve.ci_upper,
        "uci_lo": curve.uci_lower if curve.uci_lower is not None else nan,
        "uci_hi": curve.uci_upper if curve.uci_upper is not None else nan,
    })


@main.command()
@click.option("--data", type=str, default=None, help="Input CSV path.")
@click.option("--y", type=str, default=None, help="Outcome column.")
@click.option("--d", type=str, default=None, help="Treatment column.")
@click.option("--x", type=str, default=None, help="Moderator column.")
@click.option("--z", type=str, default=None, help="Covariate columns (comma-separated).")
@click.option("--treat-type", type=click.Choice(["binary", "continuous"]), default=None)
@click.option("--outcome-type", type=click.Choice(["continuous", "binary"]), default=None)
@click.option("--na-rm/--no-na-rm", "na_rm", default=None,
              help="Drop rows with missing values (default) or fail on them.")
@click.option("--trim-x", type=str, default=None,
              help="Moderator quantile trim as 'lower_q,upper_q' (e.g. 0.025,0.975).")
@click.option("--estimator", type=str, default=None,
              help="linear | binning | kernel | dml | aipw-lasso | po-lasso.")
@click.option("--grid", type=int, default=None, help="Evaluation grid size.")
@click.option("--nbins", type=int, default=None, help="Binning: number of bins.")
@click.option("--cutoffs", type=str, default=None,
              help="Binning: explicit interior cut points (comma-separated).")
@click.option("--eval-rule", type=click.Choice(["median", "midpoint"]), default=None)
@click.option("--h0", type=float, default=None, help="Kernel: fixed pilot bandwidth.")
@click.option("--fully-moderated/--restricted", "fully_moderated", default=None,
              help="Kernel: let covariate slopes vary with the moderator (default).")
@click.option("--model-y", type=str, default=None, help="DML outcome model: lasso|rf|hgb.")
@click.option("--model-t", type=str, default=None, help="DML treatment model: lasso|rf|hgb.")
@click.option("--k", type=int, default=None, help="Cross-fitting folds.")
@click.option("--seed", type=int, default=None)
@click.option("--alpha", type=float, default=None, help="1 - confidence level.")
@click.option("--signal", type=click.Choice(["aipw", "ipw", "outcome"]), default=None)
@click.option("--boot", type=int, default=None, help="Bootstrap replications.")
@click.option("--uniform/--no-uniform", "uniform", default=None,
              help="Classic estimators: add a bootstrap uniform band.")
@click.option("--tuning", type=click.Choice(["global", "per_fold"]), default=None)
@click.option("--cv-grid", type=str, default=None,
              help="TOML file of per-model hyperparameter grids (lists).")
@click.option("--out", type=str, default=None, help="Output directory.")
@click.pass_context
@_guarded
def estimate(ctx: click.Context, **cli_values) -> None:
    """Estimate an effect curve from a CSV file."""
    _apply_threads(ctx.obj.get("threads"))
    section = _config_section(ctx.obj.get("config_path"), "estimate")
    cfg = _resolve(cli_values, section, _ESTIMATE_DEFAULTS)
    _require(cfg, "estimator")
    if cfg["estimator"] not in _ESTIMATORS:
        raise CliError(EXIT_CONFIG,
                       f"unknown estimator {cfg['estimator']!r}; "
                       f"choose from {_ESTIMATORS}", field="estimator")
    ds, data_info = _load_dataset(cfg)
    curve, extras = _estimate_curve(ds, cfg)

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _curve_frame(curve).to_csv(out_dir / "curve.csv", index=False)
    plotdata = {
        "schema_version": 1,
        "method": curve.method,
        "n": curve.n,
        "alpha": curve.alpha,
        "grid": curve.grid,
        "theta": curve.theta,
        "se": curve.se,
        "ci_lo": curve.ci_lower,
        "ci_hi": curve.ci_upper,
        "uci_lo": curve.uci_lower,
        "uci_hi": curve.uci_upper,
        "flags": curve.flags,
        "histograms": _arm_histograms(ds),
    }
    _write_json(out_dir / "curve_plotdata.json", plotdata)
    manifest_cfg = {**cfg, "data_info": data_info, "estimator_extras": extras}
    _write_manifest(out_dir, "estimate", manifest_cfg,
                    ["curve.csv", "curve_plotdata.json"])
    click.echo(f"wrote {out_dir / 'curve.csv'}")


# ---------------------------------------------------------------------------
# simulate


_SIMULATE_DEFAULTS = {"dgp": None, "n": None, "seed": 0, "out": "data.csv"}


@main.command()
@click.option("--dgp", type=str, default=None, help=f"One of {', '.join(DGP_IDS)}.")
@click.option("--n", type=int, default=None, help="Sample size.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default=None, help="Output CSV path.")
@click.pass_context
@_guarded
def simulate(ctx: click.Context, **cli_values) -> None:
    """Draw one sample from a benchmark design and write it as CSV."""
    section = _config_section(ctx.obj.get("config_path"), "simulate")
    cfg = _resolve(cli_values, section, _SIMULATE_DEFAULTS)
    _require(cfg, "dgp", "n")
    sim = generate(DGPSpec(id=cfg["dgp"], n=int(cfg["n"]), seed=int(cfg["seed"])))
    out_path = Path(cfg["out"])
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(sim.dataset, out_path)
    _write_manifest(out_path.parent if str(out_path.parent) else Path("."),
                    "simulate", cfg, [out_path.name])
    click.echo(f"wrote {out_path}")


# ---------------------------------------------------------------------------
# bench


_BENCH_DEFAULTS = {"matrix": None, "out": "bench_results.csv", "seed": 0}
_MATRIX_KEYS = {"dgps", "estimators", "ns", "seeds", "learners", "alpha"}


@main.command()
@click.option("--matrix", type=str, default=None,
              help="TOML file with dgps, estimators, ns, seeds (lists).")
@click.option("--out", type=str, default=None, help="Output CSV path.")
@click.pass_context
@_guarded
def bench(ctx: click.Context, **cli_values) -> None:
    """Run a design x estimator benchmark matrix."""
    _apply_threads(ctx.obj.get("threads"))
    section = _config_section(ctx.obj.get("config_path"), "bench")
    cfg = _resolve(cli_values, section, _BENCH_DEFAULTS)
    _require(cfg, "matrix")
    matrix = _load_toml(cfg["matrix"], "matrix")
    unknown = set(matrix) - _MATRIX_KEYS
    if unknown:
        raise CliError(EXIT_CONFIG,
                       f"unknown matrix key(s): {', '.join(sorted(unknown))}",
                       field=sorted(unknown)[0])
    for key in ("dgps", "estimators", "ns", "seeds"):
        if key not in matrix:
            raise CliError(EXIT_CONFIG, f"matrix file must define '{key}'", field=key)
        if not isinstance(matrix[key], list) or not matrix[key]:
            raise CliError(EXIT_CONFIG, f"matrix '{key}' must be a nonempty list",
                           field=key)
    for dgp in matrix["dgps"]:
        if dgp not in DGP_IDS:
            raise CliError(EXIT_CONFIG, f"unknown dgp {dgp!r}; choose from {DGP_IDS}",
                           field="dgps")
    for est in matrix["estimators"]:
        if est not in ESTIMATORS:
            raise CliError(EXIT_CONFIG,
                           f"unknown estimator {est!r}; choose from {ESTIMATORS}",
                           field="estimators")
    learners = [
        _MODEL_ALIASES.get(lr, lr) for lr in matrix.get("learners", ["post_lasso"])
    ]
    rows = run_bench(
        dgps=matrix["dgps"], estimators=matrix["estimators"],
        ns=[int(v) for v in matrix["ns"]], seeds=[int(v) for v in matrix["seeds"]],
        learners=learners, alpha=float(matrix.get("alpha", 0.05)),
    )
    out_path = Path(cfg["out"])
    if str(out_path.parent):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out_path)
    n_failed = sum(1 for r in rows if r.error)
    _write_manifest(out_path.parent, "bench", {**cfg, "matrix_resolved": matrix},
                    [out_path.name])
    click.echo(f"wrote {out_path} ({len(rows)} cells, {n_failed} failed)")


# ---------------------------------------------------------------------------
# diagnose


_DIAGNOSE_DEFAULTS = {
    **_DATA_DEFAULTS,
    "nbins": 3,
    "propensity_model": "lasso",
    "seed": 0,
    "out": ".",
}


@main.command()
@click.option("--data", type=str, default=None, help="Input CSV path.")
@click.option("--y", type=str, default=None, help="Outcome column.")
@click.option("--d", type=str, default=None, help="Treatment column.")
@click.option("--x", type=str, default=None, help="Moderator column.")
@click.option("--z", type=str, default=None, help="Covariate columns (comma-separated).")
@click.option("--treat-type", type=click.Choice(["binary", "continuous"]), default=None)
@click.option("--outcome-type", type=click.Choice(["continuous", "binary"]), default=None)
@click.option("--na-rm/--no-na-rm", "na_rm", default=None)
@click.option("--trim-x", type=str, default=None)
@click.option("--nbins", type=int, default=None, help="Bins for identification flags.")
@click.option("--propensity-model", type=str, default=None, help="lasso|rf|hgb.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default=None, help="Output directory.")
@click.pass_context
@_guarded
def diagnose(ctx: click.Context, **cli_values) -> None:
    """Overlap and identification report for a dataset."""
    _apply_threads(ctx.obj.get("threads"))
    section = _config_section(ctx.obj.get("config_path"), "diagnose")
    cfg = _resolve(cli_values, section, _DIAGNOSE_DEFAULTS)
    ds, data_info = _load_dataset(cfg)
    if ds.treatment_type != "binary":
        raise CliError(EXIT_CONFIG, "diagnose requires a binary treatment",
                       field="treat_type")
    report: dict = {
        "schema_version": 1,
        "n": ds.n,
        "n_treated": int(np.sum(ds.d == 1.0)),
        "n_control": int(np.sum(ds.d == 0.0)),
        "moderator_histograms": _arm_histograms(ds),
        "warnings": [],
    }
    if report["n_treated"] == 0:
        report["warnings"].append("no treated rows: effects are not identified")
    if report["n_control"] == 0:
        report["warnings"].append("no control rows: effects are not identified")

    kind = _model_kind(cfg["propensity_model"], "propensity-model")
    try:
        F, _ = _feature_matrix(ds, kind, "auto")
        fitted = fit_learner(
            LearnerSpec(kind=kind, task="classification"), F, ds.d,
            seed=int(cfg["seed"]),
        )
        pi = np.asarray(fitted.predict(F), dtype=np.float64)
        lo, hi = OVERLAP_BAND
        outside = float(np.mean((pi < lo) | (pi > hi)))
        report["propensity"] = {
            "model": kind,
            "share_outside_band": outside,
            "band": [lo, hi],
            "summary": {
                "min": float(pi.min()),
                "q25": float(np.quantile(pi, 0.25)),
                "median": float(np.quantile(pi, 0.5)),
                "q75": float(np.quantile(pi, 0.75)),
                "max": float(pi.max()),
                "mean": float(pi.mean()),
            },
        }
        if outside > 0.5:
            report["warnings"].append(
                "over half of the estimated propensities fall outside "
                f"[{lo}, {hi}]: overlap is weak"
            )
    except DegenerateTarget:
        report["propensity"] = None
        report["warnings"].append(
            "propensity model skipped: treatment does not vary"
        )

    res = binning_cme(ds, n_bins=int(cfg["nbins"]))
    report["bins"] = {
        "edges": res.edges,
        "eval_points": res.eval_points,
        "counts": res.counts,
        "counts_treated": res.counts_treated,
        "non_identified": res.non_identified,
    }
    if bool(res.non_identified.any()):
        report["warnings"].append(
            "some moderator bins lack treatment variation; their effects "
            "are not identified"
        )

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "diagnose.json", report)
    _write_manifest(out_dir, "diagnose", {**cfg, "data_info": data_info},
                    ["diagnose.json"])
    click.echo(f"wrote {out_dir / 'diagnose.json'}")


if __name__ == "__main__":  # pragma: no cover
    main()
