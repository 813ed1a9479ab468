"""Seeded synthetic ZIP-table generator with known ground truth.

Counts come from a Poisson model whose treated coefficient is the
configured true log IRR, treatment from a logistic model in the stored
covariates (so a refit recovers the true propensity), and the
coal-influence surface is bimodal around the 4.0 classification cutoff so
that classifying at the default cutoff reproduces the generated labels
exactly. Streams are split per region via named spawn keys on a Philox
counter generator, so per-region generation is reproducible in any order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .datamodel import COVARIATE_NAMES, Dataset, Provenance, Region, ZipRecord

# Generating moments, loosely calibrated to the observed ZIP-table scales.
COVARIATE_DISTRIBUTIONS = {
    "PctOccupied": (0.88, 0.12),
    "PctUrban": (0.42, 0.35),
    "logPop": (8.3, 1.6),
    "MedianHHInc": (42.0, 15.0),
    "PctHighSchool": (0.35, 0.10),
    "PctFemale": (0.51, 0.04),
    "PctBlack": (0.08, 0.12),
    "PctPoor": (0.12, 0.09),
    "PctMovedIn5": (0.41, 0.11),
    "MedianHValue": (105.0, 60.0),
    "mean_age": (74.9, 1.3),
    "Female_rate": (0.56, 0.05),
    "White_rate": (0.89, 0.15),
    "avrelh": (0.010, 0.002),
    "avtmpf": (285.0, 2.5),
    "smokerate2000": (0.27, 0.03),
    "PctHisp": (0.03, 0.05),
}

PERCENT_CLIP = (0.001, 0.999)

# Covariate -> exposure loadings (on standardized covariates), scaled by
# confounding_strength. The same covariates drive the outcome so that the
# unadjusted contrast is biased.
EXPOSURE_LOADINGS = {
    "smokerate2000": 0.8,
    "logPop": 0.6,
    "PctPoor": 0.5,
    "MedianHHInc": -0.5,
    "PctUrban": 0.4,
    "avtmpf": 0.4,
}
OUTCOME_LOADINGS = {
    "smokerate2000": 0.25,
    "PctPoor": 0.20,
    "logPop": 0.10,
    "MedianHHInc": -0.15,
    "avtmpf": 0.10,
    "mean_age": 0.10,
}

# Bimodal coal-influence mixture split at the classification cutoff.
INFLUENCE_CUTOFF = 4.0
INFLUENCE_HIGH = (5.2, 0.8)
INFLUENCE_LOW = (2.0, 0.9)

PM25_MEAN = 12.0
PM25_SD = 1.5

# Spatial-confounder structure (active when spatial_confounder_scale > 0):
# temperature partially tracks latitude and relative humidity longitude,
# while the confounder lives on both axes. The weather covariates proxy
# only part of it, so propensity matching absorbs only that part;
# geographically close matches remove the rest as well.
SPATIAL_AVTMPF_LOADING = 0.5
SPATIAL_AVRELH_LOADING = 0.5
SPATIAL_OUTCOME_LOADING = 0.4
SPATIAL_LAT_WEIGHT = 0.6
SPATIAL_LON_WEIGHT = 0.8

REGION_BOXES = {
    Region.IndustrialMidwest: ((38.0, 45.0), (-92.0, -80.0)),
    Region.Northeast: ((39.0, 47.0), (-80.0, -67.0)),
    Region.Southeast: ((25.0, 39.0), (-92.0, -75.0)),
}


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the generator; defaults give strong measured confounding."""

    n_per_region: int = 2000
    true_log_irr: float = 0.0
    confounding_strength: float = 1.0
    spatial_confounder_scale: float = 0.0
    baseline_rate: float = 0.0285
    person_year_range: tuple[float, float] = (200.0, 2000.0)
    seed: int = 0
    exposure_intercept: float = -0.4
    pm25_treated_shift: float = 0.0
    pm25_outcome_effect: float = 0.0

    def __post_init__(self):
        if self.n_per_region < 1:
            raise ValueError("n_per_region must be positive")
        if self.baseline_rate <= 0:
            raise ValueError("baseline_rate must be positive")
        lo, hi = self.person_year_range
        if not (0 < lo <= hi):
            raise ValueError("person_year_range must satisfy 0 < lo <= hi")
        if self.confounding_strength < 0 or self.spatial_confounder_scale < 0:
            raise ValueError("strength parameters must be nonnegative")


@dataclass
class GroundTruth:
    """What the generator knows that the pipeline has to recover."""

    params: SynthParams
    true_ps: dict[str, float]
    treated: dict[str, bool]

    @property
    def true_log_irr(self) -> float:
        return self.params.true_log_irr

    @property
    def total_log_irr(self) -> float:
        """Direct effect plus the pm25-mediated pathway."""
        mediated = (
            self.params.pm25_outcome_effect * self.params.pm25_treated_shift / PM25_SD
        )
        return self.params.true_log_irr + mediated


def true_effect(ground_truth: GroundTruth) -> float:
    """The generating direct log IRR."""
    return ground_truth.true_log_irr


def _region_rng(seed: int, region_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(region_index,))
    return np.random.Generator(np.random.Philox(seq))


def _truncnorm_ppf(u, lo, hi, loc, scale):
    a = (lo - loc) / scale
    b = (hi - loc) / scale
    return stats.truncnorm.ppf(u, a, b, loc=loc, scale=scale)


def _generate_region(params: SynthParams, region: Region, region_index: int):
    n = params.n_per_region
    rng = _region_rng(params.seed, region_index)
    c = params.confounding_strength
    s = params.spatial_confounder_scale

    (lat_lo, lat_hi), (lon_lo, lon_hi) = REGION_BOXES[region]
    latitude = rng.uniform(lat_lo, lat_hi, size=n)
    longitude = rng.uniform(lon_lo, lon_hi, size=n)
    # standardized (unit-variance) coordinates within the region box
    g_lat = (latitude - (lat_lo + lat_hi) / 2.0) / ((lat_hi - lat_lo) / math.sqrt(12.0))
    g_lon = (longitude - (lon_lo + lon_hi) / 2.0) / ((lon_hi - lon_lo) / math.sqrt(12.0))

    normals = rng.standard_normal(size=(n, len(COVARIATE_NAMES)))
    if s > 0:
        # leak the coordinate axes into the weather covariates, keeping
        # their marginal SDs
        j = COVARIATE_NAMES.index("avtmpf")
        resid = math.sqrt(1.0 - SPATIAL_AVTMPF_LOADING**2)
        normals[:, j] = SPATIAL_AVTMPF_LOADING * g_lat + resid * normals[:, j]
        j = COVARIATE_NAMES.index("avrelh")
        resid = math.sqrt(1.0 - SPATIAL_AVRELH_LOADING**2)
        normals[:, j] = SPATIAL_AVRELH_LOADING * g_lon + resid * normals[:, j]

    columns = {}
    z = {}
    for j, name in enumerate(COVARIATE_NAMES):
        mean, sd = COVARIATE_DISTRIBUTIONS[name]
        x = mean + sd * normals[:, j]
        if name == "avrelh":
            x = np.clip(x, 0.0005, 0.05)
        elif name in ("MedianHHInc", "MedianHValue"):
            x = np.maximum(x, 1.0)
        elif 0.0 <= mean <= 1.0:
            x = np.clip(x, *PERCENT_CLIP)
        columns[name] = x
        z[name] = (x - mean) / sd

    u = SPATIAL_LAT_WEIGHT * g_lat + SPATIAL_LON_WEIGHT * g_lon

    logit_ps = np.full(n, params.exposure_intercept)
    for name, loading in EXPOSURE_LOADINGS.items():
        logit_ps += c * loading * z[name]
    logit_ps += s * u
    true_ps = special.expit(logit_ps)
    treated = rng.uniform(0.0, 1.0, size=n) < true_ps

    u_infl = rng.uniform(0.0, 1.0, size=n)
    hi_mean, hi_sd = INFLUENCE_HIGH
    lo_mean, lo_sd = INFLUENCE_LOW
    influence = np.where(
        treated,
        _truncnorm_ppf(u_infl, INFLUENCE_CUTOFF, np.inf, hi_mean, hi_sd),
        _truncnorm_ppf(u_infl, 0.0, INFLUENCE_CUTOFF, lo_mean, lo_sd),
    )

    pm_noise = rng.standard_normal(size=n)
    pm25 = (
        PM25_MEAN
        + PM25_SD * (0.4 * z["avtmpf"] + math.sqrt(1.0 - 0.4**2) * pm_noise)
        + params.pm25_treated_shift * treated
    )
    pm25 = np.maximum(pm25, 0.1)

    person_years = rng.uniform(*params.person_year_range, size=n)

    log_rate = np.full(n, math.log(params.baseline_rate))
    log_rate += params.true_log_irr * treated
    for name, loading in OUTCOME_LOADINGS.items():
        log_rate += c * loading * z[name]
    log_rate += s * SPATIAL_OUTCOME_LOADING * u
    log_rate += params.pm25_outcome_effect * (pm25 - PM25_MEAN) / PM25_SD
    counts = rng.poisson(person_years * np.exp(log_rate))

    records = []
    for i in range(n):
        records.append(
            ZipRecord(
                zip_id=f"{region.code}{i:05d}",
                region=region,
                coal_influence=float(influence[i]),
                pm25=float(pm25[i]),
                ihd_count=int(counts[i]),
                person_years=float(person_years[i]),
                latitude=float(latitude[i]),
                longitude=float(longitude[i]),
                covariates=tuple(float(columns[name][i]) for name in COVARIATE_NAMES),
            )
        )
    ps_map = {r.zip_id: float(true_ps[i]) for i, r in enumerate(records)}
    treated_map = {r.zip_id: bool(treated[i]) for i, r in enumerate(records)}
    return records, ps_map, treated_map


def generate(params: SynthParams) -> tuple[Dataset, GroundTruth]:
    """Generate one synthetic dataset plus its ground-truth record."""
    all_records = []
    true_ps: dict[str, float] = {}
    treated: dict[str, bool] = {}
    for index, region in enumerate(Region):
        records, ps_map, treated_map = _generate_region(params, region, index)
        all_records.extend(records)
        true_ps.update(ps_map)
        treated.update(treated_map)
    all_records.sort(key=lambda r: r.zip_id)
    dataset = Dataset(
        records=tuple(all_records),
        provenance=Provenance(
            source=f"synth(seed={params.seed})",
            accepted=len(all_records),
            dropped=0,
        ),
    )
    return dataset, GroundTruth(params=params, true_ps=true_ps, treated=treated)


def write_ground_truth_csv(ground_truth: GroundTruth, path) -> None:
    """Sidecar CSV: per-ZIP true PS plus the generating parameters."""
    p = ground_truth.params
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["zip", "true_ps", "treated", "true_log_irr", "seed", "n_per_region",
             "confounding_strength", "spatial_confounder_scale", "baseline_rate",
             "person_years_lo", "person_years_hi", "exposure_intercept",
             "pm25_treated_shift", "pm25_outcome_effect"]
        )
        for zip_id in sorted(ground_truth.true_ps):
            writer.writerow(
                [zip_id, repr(ground_truth.true_ps[zip_id]),
                 int(ground_truth.treated[zip_id]), repr(p.true_log_irr), p.seed,
                 p.n_per_region, repr(p.confounding_strength),
                 repr(p.spatial_confounder_scale), repr(p.baseline_rate),
                 repr(p.person_year_range[0]), repr(p.person_year_range[1]),
                 repr(p.exposure_intercept), repr(p.pm25_treated_shift),
                 repr(p.pm25_outcome_effect)]
            )
