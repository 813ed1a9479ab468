"""Covariate-balance diagnostics: standardized mean differences, balance
tables, and propensity-score quantile stratification."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .datamodel import COVARIATE_NAMES, Dataset
from .errors import (
    DegenerateQuantilesError,
    InsufficientUnitsError,
    ZeroPooledSdError,
)
from .errors import ZeroPooledSdWarning
from .matching import MatchedSet, PsUnit


def smd(treated, control) -> float:
    """Standardized mean difference between two groups.

    (mean_t - mean_c) / sqrt((s2_t + s2_c) / 2), using n-1 sample
    variances. Returns 0 (with a warning) when both variances are zero
    and the means agree; raises when they differ, since no finite SMD
    exists.
    """
    treated = np.asarray(treated, dtype=float)
    control = np.asarray(control, dtype=float)
    if treated.size < 2 or control.size < 2:
        raise InsufficientUnitsError("smd needs at least 2 values per group")
    mean_diff = float(treated.mean() - control.mean())
    pooled_var = (float(treated.var(ddof=1)) + float(control.var(ddof=1))) / 2.0
    if pooled_var == 0.0:
        if mean_diff == 0.0:
            warnings.warn("zero pooled SD with equal means; SMD set to 0", ZeroPooledSdWarning)
            return 0.0
        raise ZeroPooledSdError("zero pooled SD but group means differ")
    return mean_diff / math.sqrt(pooled_var)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    mean_treated: float
    sd_treated: float
    mean_control: float
    sd_control: float
    raw_smd: float
    matched_smd: float | None = None


@dataclass
class BalanceTable:
    """Per-covariate balance summary for one region's data."""

    region: object
    n_treated: int
    n_control: int
    rows: list[BalanceRow]
    n_matched_pairs: int | None = None

    def max_abs_raw_smd(self) -> float:
        return max(abs(r.raw_smd) for r in self.rows)

    def max_abs_matched_smd(self) -> float:
        matched = [abs(r.matched_smd) for r in self.rows if r.matched_smd is not None]
        if not matched:
            raise ValueError("no matched SMDs present")
        return max(matched)


def _covariate_arrays(ds: Dataset, ids: set[str]) -> np.ndarray:
    rows = [r.covariates for r in ds.records if r.zip_id in ids]
    return np.array(rows, dtype=float)


def balance_table(ds: Dataset, assignment: dict[str, bool],
                  matched: MatchedSet | None = None, region=None) -> BalanceTable:
    """Covariate means, SDs, and SMDs for raw data and (optionally) a matched set.

    Parameters
    ----------
    ds : Dataset
        Records of one region.
    assignment : dict zip_id -> bool
        Treatment indicator covering every record in ds.
    matched : MatchedSet, optional
        When given, matched-group SMDs are added per covariate.
    """
    missing = [r.zip_id for r in ds.records if r.zip_id not in assignment]
    if missing:
        raise ValueError(f"assignment does not cover {len(missing)} records")
    treated_ids = {r.zip_id for r in ds.records if assignment[r.zip_id]}
    control_ids = {r.zip_id for r in ds.records if not assignment[r.zip_id]}
    t_raw = _covariate_arrays(ds, treated_ids)
    c_raw = _covariate_arrays(ds, control_ids)

    t_matched = c_matched = None
    if matched is not None:
        t_matched = _covariate_arrays(ds, set(matched.treated_ids()))
        c_matched = _covariate_arrays(ds, set(matched.control_ids()))

    rows = []
    for j, name in enumerate(COVARIATE_NAMES):
        matched_smd = None
        if matched is not None:
            matched_smd = smd(t_matched[:, j], c_matched[:, j])
        rows.append(
            BalanceRow(
                covariate=name,
                mean_treated=float(t_raw[:, j].mean()),
                sd_treated=float(t_raw[:, j].std(ddof=1)),
                mean_control=float(c_raw[:, j].mean()),
                sd_control=float(c_raw[:, j].std(ddof=1)),
                raw_smd=smd(t_raw[:, j], c_raw[:, j]),
                matched_smd=matched_smd,
            )
        )
    return BalanceTable(
        region=region,
        n_treated=len(treated_ids),
        n_control=len(control_ids),
        rows=rows,
        n_matched_pairs=matched.n_pairs if matched is not None else None,
    )


def write_balance_csv(table: BalanceTable, path) -> None:
    """Balance table CSV; also serves as Love-plot data (covariate, SMDs)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["covariate", "mean_treated", "sd_treated", "mean_control", "sd_control",
             "raw_smd", "matched_smd"]
        )
        for r in table.rows:
            writer.writerow(
                [r.covariate, repr(r.mean_treated), repr(r.sd_treated), repr(r.mean_control),
                 repr(r.sd_control), repr(r.raw_smd),
                 "" if r.matched_smd is None else repr(r.matched_smd)]
            )


@dataclass
class Strata:
    """Propensity-score strata assignment for one region."""

    k: int
    assignment: dict[str, int]  # zip_id -> stratum in 1..k
    boundaries: list[float]

    def sizes(self) -> list[int]:
        return [sum(1 for s in self.assignment.values() if s == i + 1) for i in range(self.k)]


def quintile_strata(units: list[PsUnit], k: int = 5) -> Strata:
    """Assign units to k strata cut at pooled PS quantiles.

    The q-quantile is the order statistic at ceil(q * n) (1-indexed);
    units tied with a boundary stay in the lower stratum. Ties that would
    leave a stratum empty raise rather than silently collapsing strata.
    """
    n = len(units)
    if n < k:
        raise InsufficientUnitsError(f"need at least {k} units, got {n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    ps_sorted = sorted(u.ps for u in units)
    boundaries = [ps_sorted[math.ceil(i * n / k) - 1] for i in range(1, k)]

    def stratum_of(ps: float) -> int:
        s = 1
        for b in boundaries:
            if ps > b:
                s += 1
        return s

    assignment = {u.zip_id: stratum_of(u.ps) for u in units}
    sizes = [sum(1 for s in assignment.values() if s == i + 1) for i in range(k)]
    if any(size == 0 for size in sizes):
        raise DegenerateQuantilesError(f"propensity ties leave empty strata (sizes {sizes})")
    return Strata(k=k, assignment=assignment, boundaries=boundaries)
