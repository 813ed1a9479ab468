"""Run orchestration: config, per-region analysis flows, and report output.

Every analysis is strictly per region (classification, propensity fit,
trimming, caliper, matching, outcome model), so removing one region's rows
cannot change another region's results. All emitted artifacts are
deterministic functions of the config and input bytes.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, dapsm, diagnostics, exposure, matching
from . import glm as glm_mod
from .datamodel import COVARIATE_NAMES, Dataset, Region, ZipRecord, split_by_region, validate
from .errors import (
    ConfigError,
    DataError,
    ExpomatchError,
    IoFailureError,
    RegionAnalysisError,
)

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib


class AnalysisMode(enum.Enum):
    Primary = "primary"
    SecondaryPm25 = "secondary"
    Stratified = "stratified"
    Daps = "daps"
    Sweep = "sweep"


@dataclass
class RunConfig:
    """Resolved run configuration (config file merged with CLI flags)."""

    data_csv: str | None = None
    mode: AnalysisMode = AnalysisMode.Primary
    cutoff: float = exposure.DEFAULT_CUTOFF
    sweep_lo: float = 3.0
    sweep_hi: float = 5.0
    sweep_step: float = 0.25
    caliper_factor: float = matching.CALIPER_FACTOR
    n_strata: int = 5
    ci_level: float = 0.95
    out_dir: str = "out"
    seed: int | None = None
    daps_smd_threshold: float = dapsm.SMD_THRESHOLD
    daps_weight_start: float = 1.0
    daps_weight_stop: float = 0.0
    daps_weight_step: float = 0.0025
    daps_full_grid: bool = False
    schema: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ConfigError("cutoff must be positive")
        if not self.sweep_lo < self.sweep_hi:
            raise ConfigError("sweep range must satisfy lo < hi")
        if self.sweep_step <= 0:
            raise ConfigError("sweep step must be positive")
        if self.caliper_factor <= 0:
            raise ConfigError("caliper factor must be positive")
        if self.n_strata < 1:
            raise ConfigError("n_strata must be >= 1")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must be in (0, 1)")

    def daps_config(self) -> dapsm.DapsConfig:
        start, stop, step = self.daps_weight_start, self.daps_weight_stop, self.daps_weight_step
        if not (0.0 <= stop <= start <= 1.0) or step <= 0:
            raise ConfigError("daps weight grid must descend within [0, 1]")
        n_steps = int(round((start - stop) / step))
        grid = [start - k * step for k in range(n_steps + 1)]
        grid = [round(w, 12) for w in grid if w >= stop - 1e-12]
        return dapsm.DapsConfig(
            weight_grid=grid,
            smd_threshold=self.daps_smd_threshold,
            caliper_factor=self.caliper_factor,
        )

    def sweep_cutoffs(self) -> list[float]:
        n_steps = int(math.floor((self.sweep_hi - self.sweep_lo) / self.sweep_step + 1e-9))
        return [round(self.sweep_lo + k * self.sweep_step, 12) for k in range(n_steps + 1)]

    def canonical_dict(self) -> dict:
        # out_dir is where results go, not what they are: leaving it out
        # keeps output bytes identical regardless of destination
        return {
            "data_csv": self.data_csv,
            "mode": self.mode.value,
            "cutoff": self.cutoff,
            "sweep": [self.sweep_lo, self.sweep_hi, self.sweep_step],
            "caliper_factor": self.caliper_factor,
            "n_strata": self.n_strata,
            "ci_level": self.ci_level,
            "seed": self.seed,
            "daps": {
                "smd_threshold": self.daps_smd_threshold,
                "weight_start": self.daps_weight_start,
                "weight_stop": self.daps_weight_stop,
                "weight_step": self.daps_weight_step,
                "full_grid": self.daps_full_grid,
            },
            "schema": dict(sorted(self.schema.items())),
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_TOP_LEVEL_KEYS = {
    "data_csv": str,
    "mode": str,
    "cutoff": float,
    "sweep_lo": float,
    "sweep_hi": float,
    "sweep_step": float,
    "caliper_factor": float,
    "n_strata": int,
    "ci_level": float,
    "out_dir": str,
    "seed": int,
}
_DAPS_KEYS = {
    "smd_threshold": float,
    "weight_start": float,
    "weight_stop": float,
    "weight_step": float,
    "full_grid": bool,
}


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a TOML config file and apply CLI overrides on top."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"invalid config {path}: {err}") from err
    return config_from_mapping(raw, overrides)


def config_from_mapping(raw: dict, overrides: dict | None = None) -> RunConfig:
    kwargs: dict = {}
    for key, caster in _TOP_LEVEL_KEYS.items():
        if key in raw and raw[key] is not None:
            kwargs[key] = caster(raw[key])
    for key, caster in _DAPS_KEYS.items():
        value = raw.get("daps", {}).get(key)
        if value is not None:
            kwargs[f"daps_{key}"] = caster(value)
    if "schema" in raw:
        kwargs["schema"] = {str(k): str(v) for k, v in raw["schema"].items()}
    unknown = set(raw) - set(_TOP_LEVEL_KEYS) - {"daps", "schema", "synth"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[key] = value
    mode = kwargs.pop("mode", "primary")
    if isinstance(mode, str):
        try:
            mode = AnalysisMode(mode)
        except ValueError as err:
            raise ConfigError(f"unknown mode {mode!r}") from err
    try:
        return RunConfig(mode=mode, **kwargs)
    except TypeError as err:
        raise ConfigError(str(err)) from err


# -- per-region machinery --------------------------------------------------


@dataclass
class RegionResult:
    """Everything the report records for one region."""

    region: Region
    n_treated: int = 0
    n_control: int = 0
    irr: glm_mod.IrrEstimate | None = None
    matched: matching.MatchedSet | None = None
    n_discarded_treated: int = 0
    n_discarded_control: int = 0
    balance: diagnostics.BalanceTable | None = None
    mean_influence_high: float | None = None
    mean_influence_control: float | None = None
    pm25_smd: float | None = None
    ps_model: glm_mod.FittedGlm | None = None
    outcome_model: glm_mod.FittedGlm | None = None
    daps_weight: float | None = None
    daps_balanced: bool | None = None
    daps_max_abs_smd: float | None = None
    daps_mean_pair_km: float | None = None
    daps_rows: list[dapsm.WeightDiagnostics] | None = None
    strata_sizes: list[int] | None = None
    n_retained: int | None = None
    error: str | None = None


@dataclass
class SweepRow:
    cutoff: float
    region: Region
    irr: glm_mod.IrrEstimate | None
    mean_influence_high: float | None
    mean_influence_control: float | None
    error: str | None = None


@dataclass
class AnalysisReport:
    mode: AnalysisMode
    config: RunConfig
    regions: list[RegionResult]
    sweep_rows: list[SweepRow] | None = None
    provenance: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def prepare_dataset(ds: Dataset) -> tuple[Dataset, dict[str, int]]:
    """Drop records violating model preconditions; count exclusions by rule."""
    violations = validate(ds)
    if not violations:
        return ds, {}
    bad_ids = {v.zip_id for v in violations}
    rule_counts: dict[str, int] = {}
    for v in violations:
        rule_counts[v.rule] = rule_counts.get(v.rule, 0) + 1
    records = tuple(r for r in ds.records if r.zip_id not in bad_ids)
    if not records:
        raise DataError("no records survive validation")
    cleaned = Dataset(records=records, provenance=ds.provenance)
    return cleaned, rule_counts


def build_design(records: list[ZipRecord], extra: dict[str, np.ndarray] | None = None,
                 with_pm25: bool = False) -> glm_mod.DesignMatrix:
    """Intercept + extra columns + the 17 covariates (+ pm25 when asked)."""
    names = ["intercept"]
    cols = [np.ones(len(records))]
    for name, col in (extra or {}).items():
        names.append(name)
        cols.append(np.asarray(col, dtype=float))
    mat = np.array([r.covariates for r in records], dtype=float)
    for j, name in enumerate(COVARIATE_NAMES):
        names.append(name)
        cols.append(mat[:, j])
    if with_pm25:
        names.append("pm25")
        cols.append(np.array([r.pm25 for r in records], dtype=float))
    return glm_mod.DesignMatrix(tuple(names), np.column_stack(cols))


def _ps_units(records: list[ZipRecord], flags: np.ndarray, with_pm25: bool):
    """Fit the propensity model and wrap each record as a PsUnit."""
    X = build_design(records, with_pm25=with_pm25)
    ps_model = glm_mod.fit_logistic(X, flags)
    ps = np.clip(glm_mod.predict_proba(ps_model, X), 1e-12, 1.0 - 1e-12)
    units = [
        matching.PsUnit.from_ps(r.zip_id, bool(t), float(p), r.region, r.latitude, r.longitude)
        for r, t, p in zip(records, flags, ps)
    ]
    return ps_model, units


def _outcome_fit(records_by_id: dict[str, ZipRecord], matched: matching.MatchedSet,
                 with_pm25: bool, ci_level: float, region: Region):
    """Poisson IRR on the matched units: exposure + covariates + offset."""
    rows = [records_by_id[t] for t in matched.treated_ids()]
    rows += [records_by_id[c] for c in matched.control_ids()]
    exposed = np.array([1.0] * matched.n_pairs + [0.0] * matched.n_pairs)
    X = build_design(rows, extra={"exposed": exposed}, with_pm25=with_pm25)
    counts = np.array([r.ihd_count for r in rows], dtype=float)
    offsets = np.log(np.array([r.person_years for r in rows], dtype=float))
    model = glm_mod.fit_poisson(X, counts, offsets)
    est = glm_mod.irr_with_ci(model, "exposed", level=ci_level, region=region,
                              n_pairs=matched.n_pairs)
    return model, est


def _classification_flags(sub: Dataset, cutoff: float) -> np.ndarray:
    summary = exposure.classify(sub, cutoff)
    return np.array([a.treated for a in summary], dtype=float), summary


def _group_mean_influence(summary) -> tuple[float | None, float | None]:
    high = [a.influence for a in summary if a.treated]
    ctl = [a.influence for a in summary if not a.treated]
    mean_high = float(np.mean(high)) if high else None
    mean_ctl = float(np.mean(ctl)) if ctl else None
    return mean_high, mean_ctl


def _matched_pm25_smd(records_by_id, matched: matching.MatchedSet) -> float | None:
    if matched.n_pairs < 2:
        return None
    t = [records_by_id[i].pm25 for i in matched.treated_ids()]
    c = [records_by_id[i].pm25 for i in matched.control_ids()]
    return diagnostics.smd(t, c)


def _split_discarded(matched: matching.MatchedSet, units) -> tuple[int, int]:
    treated_ids = {u.zip_id for u in units if u.treated}
    n_t = sum(1 for i in matched.discarded if i in treated_ids)
    return n_t, len(matched.discarded) - n_t


def _matched_region(sub: Dataset, config: RunConfig, with_pm25: bool) -> RegionResult:
    region = sub.records[0].region
    flags, summary = _classification_flags(sub, config.cutoff)
    if summary.n_high_exposed == 0 or summary.n_control == 0:
        raise DataError(
            f"cutoff {config.cutoff} leaves an empty exposure group "
            f"({summary.n_high_exposed} high, {summary.n_control} control)"
        )
    records = list(sub.records)
    records_by_id = {r.zip_id: r for r in records}
    ps_model, units = _ps_units(records, flags, with_pm25)
    matched = matching.match_with_trim(units, config.caliper_factor)
    outcome_model, est = _outcome_fit(records_by_id, matched, with_pm25, config.ci_level, region)
    assignment = {a.zip_id: a.treated for a in summary}
    balance = diagnostics.balance_table(sub, assignment, matched, region=region)
    mean_high, mean_ctl = _group_mean_influence(summary)
    n_disc_t, n_disc_c = _split_discarded(matched, units)
    return RegionResult(
        region=region,
        n_treated=summary.n_high_exposed,
        n_control=summary.n_control,
        irr=est,
        matched=matched,
        n_discarded_treated=n_disc_t,
        n_discarded_control=n_disc_c,
        balance=balance,
        mean_influence_high=mean_high,
        mean_influence_control=mean_ctl,
        pm25_smd=_matched_pm25_smd(records_by_id, matched),
        ps_model=ps_model,
        outcome_model=outcome_model,
    )


def _stratified_region(sub: Dataset, config: RunConfig) -> RegionResult:
    region = sub.records[0].region
    flags, summary = _classification_flags(sub, config.cutoff)
    if summary.n_high_exposed == 0 or summary.n_control == 0:
        raise DataError(f"cutoff {config.cutoff} leaves an empty exposure group")
    records = list(sub.records)
    ps_model, units = _ps_units(records, flags, with_pm25=False)
    kept, discarded = matching.trim_support(units)
    strata = diagnostics.quintile_strata(kept, k=config.n_strata)

    kept_ids = {u.zip_id for u in kept}
    rows = [r for r in records if r.zip_id in kept_ids]
    # stratum indicator columns for strata 2..k (stratum 1 is baseline)
    extra = {"exposed": np.array([1.0 if u.treated else 0.0 for u in kept])}
    kept_order = [u.zip_id for u in kept]
    for s in range(2, strata.k + 1):
        extra[f"stratum_{s}"] = np.array(
            [1.0 if strata.assignment[z] == s else 0.0 for z in kept_order]
        )
    rows_by_id = {r.zip_id: r for r in rows}
    ordered_rows = [rows_by_id[z] for z in kept_order]
    X = build_design(ordered_rows, extra=extra, with_pm25=False)
    counts = np.array([r.ihd_count for r in ordered_rows], dtype=float)
    offsets = np.log(np.array([r.person_years for r in ordered_rows], dtype=float))
    outcome_model = glm_mod.fit_poisson(X, counts, offsets)
    est = glm_mod.irr_with_ci(outcome_model, "exposed", level=config.ci_level,
                              region=region, n_pairs=0)
    assignment = {a.zip_id: a.treated for a in summary}
    balance = diagnostics.balance_table(sub, assignment, None, region=region)
    mean_high, mean_ctl = _group_mean_influence(summary)
    n_disc_t = sum(1 for u in discarded if u.treated)
    return RegionResult(
        region=region,
        n_treated=summary.n_high_exposed,
        n_control=summary.n_control,
        irr=est,
        balance=balance,
        mean_influence_high=mean_high,
        mean_influence_control=mean_ctl,
        ps_model=ps_model,
        outcome_model=outcome_model,
        n_discarded_treated=n_disc_t,
        n_discarded_control=len(discarded) - n_disc_t,
        strata_sizes=strata.sizes(),
        n_retained=len(kept),
    )


def _daps_region(sub: Dataset, config: RunConfig) -> RegionResult:
    region = sub.records[0].region
    flags, summary = _classification_flags(sub, config.cutoff)
    if summary.n_high_exposed == 0 or summary.n_control == 0:
        raise DataError(f"cutoff {config.cutoff} leaves an empty exposure group")
    records = list(sub.records)
    records_by_id = {r.zip_id: r for r in records}
    ps_model, units = _ps_units(records, flags, with_pm25=False)
    kept, discarded = matching.trim_support(units)
    covariates = {r.zip_id: dict(zip(COVARIATE_NAMES, r.covariates)) for r in records}
    selection = dapsm.select_weight(kept, config.daps_config(), covariates,
                                    evaluate_full_grid=config.daps_full_grid)
    matched = selection.matched
    matched.discarded = sorted(u.zip_id for u in discarded)
    outcome_model, est = _outcome_fit(records_by_id, matched, False, config.ci_level, region)
    assignment = {a.zip_id: a.treated for a in summary}
    balance = diagnostics.balance_table(sub, assignment, matched, region=region)
    mean_high, mean_ctl = _group_mean_influence(summary)
    n_disc_t = sum(1 for u in discarded if u.treated)
    return RegionResult(
        region=region,
        n_treated=summary.n_high_exposed,
        n_control=summary.n_control,
        irr=est,
        matched=matched,
        n_discarded_treated=n_disc_t,
        n_discarded_control=len(discarded) - n_disc_t,
        balance=balance,
        mean_influence_high=mean_high,
        mean_influence_control=mean_ctl,
        pm25_smd=_matched_pm25_smd(records_by_id, matched),
        ps_model=ps_model,
        outcome_model=outcome_model,
        daps_weight=selection.weight,
        daps_balanced=selection.balanced,
        daps_max_abs_smd=selection.max_abs_smd,
        daps_mean_pair_km=dapsm.mean_pair_distance_km(matched, kept),
        daps_rows=selection.rows,
    )


def _run_regions(ds: Dataset, config: RunConfig, region_fn) -> list[RegionResult]:
    results = []
    for region in Region:
        sub = split_by_region(ds)[region]
        if not sub.records:
            continue
        try:
            results.append(region_fn(sub))
        except ExpomatchError as err:
            raise RegionAnalysisError(region.code, err) from err
    if not results:
        raise DataError("dataset contains no regions")
    return results


def _base_report(mode: AnalysisMode, config: RunConfig, ds: Dataset,
                 exclusions: dict[str, int]) -> AnalysisReport:
    provenance = {
        "source": ds.provenance.source,
        "input_digest": ds.provenance.digest,
        "rows_accepted": ds.provenance.accepted,
        "rows_dropped": ds.provenance.dropped,
        "excluded_by_rule": dict(sorted(exclusions.items())),
        "config_hash": config.config_hash(),
        "versions": {
            "expomatch": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    flags = []
    if exclusions:
        flags.append(f"excluded_invalid_records={sum(exclusions.values())}")
    return AnalysisReport(mode=mode, config=config, regions=[], provenance=provenance,
                         flags=flags)


def run_primary(ds: Dataset, config: RunConfig) -> AnalysisReport:
    """Full primary flow per region: classify, PS, trim, caliper, match,
    Poisson with residual-covariate adjustment."""
    ds, exclusions = prepare_dataset(ds)
    report = _base_report(AnalysisMode.Primary, config, ds, exclusions)
    report.regions = _run_regions(ds, config, lambda sub: _matched_region(sub, config, False))
    return report


def run_secondary(ds: Dataset, config: RunConfig) -> AnalysisReport:
    """Primary flow with pm25 appended to both the propensity and outcome models."""
    ds, exclusions = prepare_dataset(ds)
    report = _base_report(AnalysisMode.SecondaryPm25, config, ds, exclusions)
    report.regions = _run_regions(ds, config, lambda sub: _matched_region(sub, config, True))
    return report


def run_stratified(ds: Dataset, config: RunConfig) -> AnalysisReport:
    """Quintile-stratified analysis: one Poisson fit per region on all
    retained units with stratum indicators."""
    ds, exclusions = prepare_dataset(ds)
    report = _base_report(AnalysisMode.Stratified, config, ds, exclusions)
    report.regions = _run_regions(ds, config, lambda sub: _stratified_region(sub, config))
    return report


def run_daps(ds: Dataset, config: RunConfig) -> AnalysisReport:
    """Distance-adjusted matching with balance-driven weight selection."""
    ds, exclusions = prepare_dataset(ds)
    report = _base_report(AnalysisMode.Daps, config, ds, exclusions)
    report.regions = _run_regions(ds, config, lambda sub: _daps_region(sub, config))
    for r in report.regions:
        if r.daps_balanced is False:
            report.flags.append(f"daps_not_balanced:{r.region.code}")
    return report


def run_sweep(ds: Dataset, config: RunConfig) -> AnalysisReport:
    """Primary analysis repeated over a cutoff grid; failures are recorded
    per cutoff and region, and the sweep continues."""
    ds, exclusions = prepare_dataset(ds)
    report = _base_report(AnalysisMode.Sweep, config, ds, exclusions)
    rows: list[SweepRow] = []
    by_region = split_by_region(ds)
    for cutoff in config.sweep_cutoffs():
        cut_config = RunConfig(**{**_config_kwargs(config), "cutoff": cutoff})
        for region in Region:
            sub = by_region[region]
            if not sub.records:
                continue
            try:
                result = _matched_region(sub, cut_config, with_pm25=False)
                rows.append(SweepRow(cutoff=cutoff, region=region, irr=result.irr,
                                     mean_influence_high=result.mean_influence_high,
                                     mean_influence_control=result.mean_influence_control))
            except ExpomatchError as err:
                rows.append(SweepRow(cutoff=cutoff, region=region, irr=None,
                                     mean_influence_high=None, mean_influence_control=None,
                                     error=str(err)))
                report.flags.append(f"sweep_failure:{region.code}@{cutoff}")
    report.sweep_rows = rows
    return report


def _config_kwargs(config: RunConfig) -> dict:
    return {
        "data_csv": config.data_csv,
        "mode": config.mode,
        "cutoff": config.cutoff,
        "sweep_lo": config.sweep_lo,
        "sweep_hi": config.sweep_hi,
        "sweep_step": config.sweep_step,
        "caliper_factor": config.caliper_factor,
        "n_strata": config.n_strata,
        "ci_level": config.ci_level,
        "out_dir": config.out_dir,
        "seed": config.seed,
        "daps_smd_threshold": config.daps_smd_threshold,
        "daps_weight_start": config.daps_weight_start,
        "daps_weight_stop": config.daps_weight_stop,
        "daps_weight_step": config.daps_weight_step,
        "daps_full_grid": config.daps_full_grid,
        "schema": config.schema,
    }


RUNNERS = {
    AnalysisMode.Primary: run_primary,
    AnalysisMode.SecondaryPm25: run_secondary,
    AnalysisMode.Stratified: run_stratified,
    AnalysisMode.Daps: run_daps,
    AnalysisMode.Sweep: run_sweep,
}


def run(ds: Dataset, config: RunConfig) -> AnalysisReport:
    return RUNNERS[config.mode](ds, config)


# -- report emission -------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: AnalysisReport, out_dir) -> list[str]:
    """Write all report artifacts; returns the list of files written."""
    import csv

    try:
        os.makedirs(out_dir, exist_ok=True)
        models_dir = os.path.join(out_dir, "models")
        os.makedirs(models_dir, exist_ok=True)
        written = []

        path = os.path.join(out_dir, "irr_table.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["region", "mode", "irr", "ci_low", "ci_high", "n_pairs"])
            for r in report.regions:
                if r.irr is None:
                    continue
                writer.writerow([r.region.code, report.mode.value, _fmt(r.irr.irr),
                                 _fmt(r.irr.ci_low), _fmt(r.irr.ci_high), r.irr.n_pairs])
        written.append(path)

        path = os.path.join(out_dir, "report.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(human_table(report))
        written.append(path)

        for r in report.regions:
            if r.balance is not None:
                path = os.path.join(out_dir, f"balance_{r.region.code}.csv")
                diagnostics.write_balance_csv(r.balance, path)
                written.append(path)
            if r.matched is not None:
                path = os.path.join(out_dir, f"matched_{r.region.code}.csv")
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["treated_zip", "control_zip"])
                    for t, c in r.matched.pairs:
                        writer.writerow([t, c])
                written.append(path)
            if r.daps_rows is not None:
                path = os.path.join(out_dir, f"daps_weights_{r.region.code}.csv")
                dapsm.write_weight_diagnostics(r.daps_rows, path)
                written.append(path)
            for label, model in (("logistic", r.ps_model), ("poisson", r.outcome_model)):
                if model is None:
                    continue
                path = os.path.join(models_dir, f"{label}_{r.region.code}.json")
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(model.to_dict(), fh, sort_keys=True, indent=2)
                    fh.write("\n")
                written.append(path)

        if report.sweep_rows is not None:
            path = os.path.join(out_dir, "sweep.csv")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["cutoff", "region", "irr", "ci_low", "ci_high", "n_pairs",
                                 "mean_influence_high", "mean_influence_control", "error"])
                for row in report.sweep_rows:
                    irr = row.irr
                    writer.writerow([
                        _fmt(row.cutoff), row.region.code,
                        _fmt(irr.irr) if irr else "",
                        _fmt(irr.ci_low) if irr else "",
                        _fmt(irr.ci_high) if irr else "",
                        irr.n_pairs if irr else "",
                        _fmt(row.mean_influence_high), _fmt(row.mean_influence_control),
                        row.error or "",
                    ])
            written.append(path)

        path = os.path.join(out_dir, "run_summary.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_summary_dict(report), fh, sort_keys=True, indent=2)
            fh.write("\n")
        written.append(path)
        return written
    except OSError as err:
        raise IoFailureError(f"cannot write report to {out_dir}: {err}") from err


def _summary_dict(report: AnalysisReport) -> dict:
    regions = {}
    for r in report.regions:
        entry = {
            "n_high_exposed": r.n_treated,
            "n_control": r.n_control,
            "n_matched_pairs": r.matched.n_pairs if r.matched else None,
            "n_unmatched_treated": len(r.matched.unmatched_treated) if r.matched else None,
            "n_unmatched_control": len(r.matched.unmatched_control) if r.matched else None,
            "n_discarded_treated": r.n_discarded_treated,
            "n_discarded_control": r.n_discarded_control,
            "caliper": _fmt(r.matched.caliper) if r.matched else None,
            "irr": _fmt(r.irr.irr) if r.irr else None,
            "ci_low": _fmt(r.irr.ci_low) if r.irr else None,
            "ci_high": _fmt(r.irr.ci_high) if r.irr else None,
            "mean_influence_high": _fmt(r.mean_influence_high),
            "mean_influence_control": _fmt(r.mean_influence_control),
            "pm25_smd": _fmt(r.pm25_smd),
        }
        if r.daps_weight is not None:
            entry["daps"] = {
                "weight": _fmt(r.daps_weight),
                "balanced": r.daps_balanced,
                "max_abs_smd": _fmt(r.daps_max_abs_smd),
                "mean_pair_km": _fmt(r.daps_mean_pair_km),
            }
        if r.strata_sizes is not None:
            entry["strata_sizes"] = r.strata_sizes
            entry["n_retained"] = r.n_retained
        regions[r.region.code] = entry
    return {
        "mode": report.mode.value,
        "config": report.config.canonical_dict(),
        "provenance": report.provenance,
        "flags": sorted(report.flags),
        "regions": regions,
    }


def human_table(report: AnalysisReport) -> str:
    """Two-decimal IRR table for terminal output."""
    lines = [f"mode: {report.mode.value}  cutoff: {report.config.cutoff}"]
    lines.append(f"{'region':<8} {'IRR':>6} {'95% CI':>16} {'pairs':>7}")
    for r in report.regions:
        if r.irr is None:
            lines.append(f"{r.region.code:<8} {'--':>6} {'--':>16} {'--':>7}")
            continue
        ci = f"({r.irr.ci_low:.2f}, {r.irr.ci_high:.2f})"
        lines.append(f"{r.region.code:<8} {r.irr.irr:>6.2f} {ci:>16} {r.irr.n_pairs:>7}")
    for flag in sorted(report.flags):
        lines.append(f"flag: {flag}")
    return "\n".join(lines) + "\n"
