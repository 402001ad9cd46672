"""Tabular data model: ingestion, validation, trimming, fold assignment.

A :class:`Dataset` holds the quadruple (outcome ``y``, treatment ``d``,
moderator ``x``, covariate matrix ``z``) as immutable float arrays. All
estimators in the package consume this type. Quantiles everywhere use the
linear-interpolation convention (numpy's default, R type 7).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np
import pandas as pd

from .rng import make_rng

__all__ = [
    "Dataset",
    "FoldAssignment",
    "TrimSpec",
    "make_dataset",
    "subset",
    "ingest_csv",
    "write_csv",
    "assign_folds",
    "trim",
    "DataError",
    "MissingColumn",
    "ParseError",
    "EmptyAfterDrop",
    "KTooLarge",
    "EmptyAfterTrim",
]


class DataError(ValueError):
    """Base class for data-layer failures."""


class MissingColumn(DataError):
    """A mapped column is absent from the file."""


class ParseError(DataError):
    """A mapped column could not be parsed as numeric, or missing values
    were present with ``na_rm=False``."""


class EmptyAfterDrop(DataError):
    """Row-wise deletion of missing values removed every row."""


class KTooLarge(DataError):
    """Fold count outside the valid range ``2 <= k <= n``."""


class EmptyAfterTrim(DataError):
    """Trimming removed every row."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a and a.flags.writeable:
        out = a.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable estimation sample.

    Attributes
    ----------
    y : ndarray, shape (n,)
        Outcome.
    d : ndarray, shape (n,)
        Treatment; exactly 0/1 when ``treatment_type == "binary"``.
    x : ndarray, shape (n,)
        Moderator.
    z : ndarray, shape (n, p)
        Additional covariates; ``p`` may be zero.
    treatment_type : {"binary", "continuous"}
    outcome_type : {"continuous", "binary"}
    row_ids : ndarray, shape (n,)
        Integer identifiers carried through subsetting operations.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray
    treatment_type: Literal["binary", "continuous"] = "binary"
    outcome_type: Literal["continuous", "binary"] = "continuous"
    row_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        y = _readonly(np.asarray(self.y, dtype=np.float64).ravel())
        d = _readonly(np.asarray(self.d, dtype=np.float64).ravel())
        x = _readonly(np.asarray(self.x, dtype=np.float64).ravel())
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.size == 0:
            z = z.reshape(len(y), 0)
        z = _readonly(z)
        n = len(y)
        if n < 1:
            raise ValueError("dataset must contain at least one row")
        if not (len(d) == len(x) == n and z.shape[0] == n):
            raise ValueError("y, d, x, z must have equal row counts")
        for name, a in (("y", y), ("d", d), ("x", x), ("z", z)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in column {name!r}")
        if self.treatment_type not in ("binary", "continuous"):
            raise ValueError(f"unknown treatment_type {self.treatment_type!r}")
        if self.outcome_type not in ("continuous", "binary"):
            raise ValueError(f"unknown outcome_type {self.outcome_type!r}")
        if self.treatment_type == "binary" and not np.all((d == 0) | (d == 1)):
            raise ValueError("binary treatment must contain only 0/1 values")
        if self.outcome_type == "binary" and not np.all((y == 0) | (y == 1)):
            raise ValueError("binary outcome must contain only 0/1 values")
        ids = self.row_ids
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64).ravel()
            if len(ids) != n:
                raise ValueError("row_ids length mismatch")
        ids = np.ascontiguousarray(ids)
        ids.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.z.shape[1]


def make_dataset(
    y,
    d,
    x,
    z=None,
    treatment_type: Literal["binary", "continuous"] = "binary",
    outcome_type: Literal["continuous", "binary"] = "continuous",
    row_ids=None,
) -> Dataset:
    """Convenience constructor accepting array-likes; ``z=None`` means p=0."""
    y = np.asarray(y, dtype=np.float64)
    if z is None:
        z = np.empty((len(y), 0))
    return Dataset(
        y=y,
        d=d,
        x=x,
        z=z,
        treatment_type=treatment_type,
        outcome_type=outcome_type,
        row_ids=row_ids,
    )


def subset(ds: Dataset, rows: np.ndarray) -> Dataset:
    """A new Dataset containing ``rows`` (indices; repetition allowed)."""
    rows = np.asarray(rows)
    return Dataset(
        y=ds.y[rows],
        d=ds.d[rows],
        x=ds.x[rows],
        z=ds.z[rows],
        treatment_type=ds.treatment_type,
        outcome_type=ds.outcome_type,
        row_ids=ds.row_ids[rows],
    )


def ingest_csv(
    path: str | Path,
    column_map: Mapping[str, str | Sequence[str]],
    na_rm: bool = True,
    treatment_type: Literal["binary", "continuous"] = "binary",
    outcome_type: Literal["continuous", "binary"] = "continuous",
) -> tuple[Dataset, int]:
    """Read a CSV (RFC 4180, header row, UTF-8, '.' decimals) into a Dataset.

    Parameters
    ----------
    column_map : mapping
        Keys ``"y"``, ``"d"``, ``"x"`` map to column names; optional key
        ``"z"`` maps to a sequence of covariate column names.
    na_rm : bool
        Drop rows with missing/non-finite values in any mapped column. When
        False, such rows raise :class:`ParseError`.

    Returns
    -------
    (Dataset, int)
        The dataset and the number of dropped rows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    # round_trip: shortest-repr floats written by write_csv must parse back
    # to the identical bit pattern
    frame = pd.read_csv(path, float_precision="round_trip")
    z_names = list(column_map.get("z", []) or [])
    wanted = [column_map["y"], column_map["d"], column_map["x"], *z_names]
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise MissingColumn(f"columns not in file: {missing}")
    cols = {}
    for name in wanted:
        try:
            cols[name] = pd.to_numeric(frame[name], errors="raise").to_numpy(
                dtype=np.float64
            )
        except (ValueError, TypeError) as exc:
            raise ParseError(f"column {name!r} is not numeric: {exc}") from exc
    stacked = np.column_stack([cols[name] for name in wanted])
    keep = np.all(np.isfinite(stacked), axis=1)
    dropped = int(np.sum(~keep))
    if dropped and not na_rm:
        raise ParseError(
            f"{dropped} rows contain missing or non-finite values "
            "(pass na_rm=True to drop them)"
        )
    if not np.any(keep):
        raise EmptyAfterDrop("all rows dropped by missing-value removal")
    stacked = stacked[keep]
    ds = Dataset(
        y=stacked[:, 0],
        d=stacked[:, 1],
        x=stacked[:, 2],
        z=stacked[:, 3:],
        treatment_type=treatment_type,
        outcome_type=outcome_type,
        row_ids=np.flatnonzero(keep),
    )
    return ds, dropped


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset with canonical headers y,d,x,z1..zp.

    Floats are rendered with shortest round-trip representation, so
    ingesting the file reproduces the arrays bit-identically.
    """
    data = {"y": ds.y, "d": ds.d, "x": ds.x}
    for j in range(ds.p):
        data[f"z{j + 1}"] = ds.z[:, j]
    pd.DataFrame(data).to_csv(path, index=False)


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of rows into k folds of near-equal size."""

    k: int
    fold_of: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        fold_of = np.asarray(self.fold_of, dtype=np.int64)
        fold_of = np.ascontiguousarray(fold_of)
        fold_of.flags.writeable = False
        object.__setattr__(self, "fold_of", fold_of)
        sizes = np.bincount(fold_of, minlength=self.k)
        if len(sizes) != self.k or np.any(sizes == 0):
            raise ValueError("every fold must be nonempty")
        if sizes.max() - sizes.min() > 1:
            raise ValueError("fold sizes may differ by at most 1")

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)


def assign_folds(ds: Dataset | int, k: int, seed: int) -> FoldAssignment:
    """Randomly partition rows into ``k`` folds.

    Row indices are shuffled with a seeded PCG64 generator and dealt
    round-robin, so fold sizes differ by at most one and the assignment is
    a pure function of ``(n, k, seed)``.
    """
    n = ds if isinstance(ds, (int, np.integer)) else ds.n
    if not 2 <= k <= n:
        raise KTooLarge(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = make_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k
    return FoldAssignment(k=int(k), fold_of=fold_of, seed=int(seed))


@dataclass(frozen=True)
class TrimSpec:
    """Quantile-range trimming rule.

    ``moderator_quantile`` trims on x; ``propensity_quantile`` trims on a
    supplied propensity vector.
    """

    mode: Literal["moderator_quantile", "propensity_quantile"]
    lower_q: float
    upper_q: float

    def __post_init__(self) -> None:
        if self.mode not in ("moderator_quantile", "propensity_quantile"):
            raise ValueError(f"unknown trim mode {self.mode!r}")
        if not 0.0 <= self.lower_q < self.upper_q <= 1.0:
            raise ValueError("need 0 <= lower_q < upper_q <= 1")


def trim(
    ds: Dataset,
    spec: TrimSpec,
    propensity: np.ndarray | None = None,
) -> Dataset:
    """Retain rows whose trim variable lies within its empirical
    [lower_q, upper_q] quantile range (type-7 quantiles, closed interval)."""
    if spec.mode == "propensity_quantile":
        if propensity is None:
            raise ValueError("propensity vector required for propensity_quantile mode")
        var = np.asarray(propensity, dtype=np.float64).ravel()
        if len(var) != ds.n:
            raise ValueError("propensity length mismatch")
        if np.any((var <= 0.0) | (var >= 1.0)):
            raise ValueError("propensity values must lie in (0, 1)")
    else:
        if propensity is not None:
            raise ValueError("propensity only valid with propensity_quantile mode")
        var = ds.x
    lo = np.quantile(var, spec.lower_q)
    hi = np.quantile(var, spec.upper_q)
    keep = (var >= lo) & (var <= hi)
    if not np.any(keep):
        raise EmptyAfterTrim("no rows inside the trim quantile range")
    return subset(ds, np.flatnonzero(keep))
