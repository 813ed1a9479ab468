"""ZIP-code record schema, CSV ingestion, validation, and region splits."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import math
import time
from dataclasses import dataclass, field

from .errors import DuplicateKeyError, EmptyDatasetError, MissingColumnError

# Covariates entering the propensity and outcome models, in canonical order.
COVARIATE_NAMES = (
    "PctOccupied",
    "PctUrban",
    "logPop",
    "MedianHHInc",
    "PctHighSchool",
    "PctFemale",
    "PctBlack",
    "PctPoor",
    "PctMovedIn5",
    "MedianHValue",
    "mean_age",
    "Female_rate",
    "White_rate",
    "avrelh",
    "avtmpf",
    "smokerate2000",
    "PctHisp",
)

# Covariates constrained to [0, 1]. avrelh is a fraction too but arrives
# pre-scaled from the weather source, so it is validated with the rest.
PERCENT_COVARIATES = frozenset(
    {
        "PctOccupied",
        "PctUrban",
        "PctHighSchool",
        "PctFemale",
        "PctBlack",
        "PctPoor",
        "PctMovedIn5",
        "Female_rate",
        "White_rate",
        "smokerate2000",
        "PctHisp",
        "avrelh",
    }
)

BASE_COLUMNS = ("zip", "region", "coal_influence", "pm25", "ihd", "person_years", "lat", "lon")


class Region(enum.Enum):
    """Study regions, with the CSV codes used in the input table."""

    IndustrialMidwest = "IMW"
    Northeast = "NE"
    Southeast = "SE"

    @classmethod
    def from_code(cls, code: str) -> "Region":
        return cls(code.strip())

    @property
    def code(self) -> str:
        return self.value


@dataclass(frozen=True)
class ZipRecord:
    """One ZIP code's covariates, exposure influence, and outcome data."""

    zip_id: str
    region: Region
    coal_influence: float
    pm25: float
    ihd_count: int
    person_years: float
    latitude: float
    longitude: float
    covariates: tuple[float, ...]  # ordered as COVARIATE_NAMES

    def covariate(self, name: str) -> float:
        return self.covariates[COVARIATE_NAMES.index(name)]


@dataclass
class Provenance:
    """Where a dataset came from and what ingestion kept or dropped."""

    source: str
    accepted: int
    dropped: int
    digest: str = ""
    ingested_at: float = field(default=0.0, compare=False, repr=False)


@dataclass
class Dataset:
    """Immutable-by-convention list of records, sorted by zip_id."""

    records: tuple[ZipRecord, ...]
    provenance: Provenance

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class Violation:
    """A record that breaks one invariant, identified by rule name."""

    zip_id: str
    rule: str
    value: float


def default_schema() -> dict[str, str]:
    """Canonical column name for every required field (identity mapping)."""
    return {name: name for name in BASE_COLUMNS + COVARIATE_NAMES}


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _parse_count(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise
        return int(value)


def parse_zip_table(csv_source, schema: dict[str, str] | None = None) -> Dataset:
    """Ingest the analysis table from CSV.

    Parameters
    ----------
    csv_source : path, bytes, or text file-like
        UTF-8, comma-delimited, header row, one ZIP per row.
    schema : dict, optional
        Maps canonical field names (``zip``, ``region``, ..., covariate
        names) to the column headers actually present. Defaults to the
        identity mapping.

    Returns
    -------
    Dataset
        Records sorted by zip_id. Rows with missing or unparseable
        required fields are dropped and counted in provenance.

    Raises
    ------
    MissingColumnError
        A required column cannot be resolved via the schema.
    DuplicateKeyError
        Two valid rows share a zip_id.
    EmptyDatasetError
        No valid rows remain.
    """
    schema = dict(default_schema(), **(schema or {}))
    source_name, text = _read_text(csv_source)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()

    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [schema[f] for f in BASE_COLUMNS + COVARIATE_NAMES if schema[f] not in header]
    if missing:
        raise MissingColumnError(f"missing required columns: {', '.join(sorted(missing))}")

    records: dict[str, ZipRecord] = {}
    dropped = 0
    for row in reader:
        try:
            record = _row_to_record(row, schema)
        except (ValueError, TypeError, KeyError):
            dropped += 1
            continue
        if record.zip_id in records:
            raise DuplicateKeyError(f"duplicate zip_id {record.zip_id!r}")
        records[record.zip_id] = record

    if not records:
        raise EmptyDatasetError(f"no valid rows in {source_name}")

    ordered = tuple(records[k] for k in sorted(records))
    provenance = Provenance(
        source=source_name,
        accepted=len(ordered),
        dropped=dropped,
        digest=digest,
        ingested_at=time.time(),
    )
    return Dataset(records=ordered, provenance=provenance)


def _read_text(csv_source) -> tuple[str, str]:
    if isinstance(csv_source, bytes):
        return "<bytes>", csv_source.decode("utf-8")
    if hasattr(csv_source, "read"):
        data = csv_source.read()
        name = getattr(csv_source, "name", "<stream>")
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return str(name), data
    with open(csv_source, "r", encoding="utf-8", newline="") as fh:
        return str(csv_source), fh.read()


def _row_to_record(row: dict[str, str], schema: dict[str, str]) -> ZipRecord:
    def cell(field_name: str) -> str:
        value = row[schema[field_name]]
        if value is None or value.strip() == "":
            raise ValueError(f"blank {field_name}")
        return value.strip()

    return ZipRecord(
        zip_id=cell("zip"),
        region=Region.from_code(cell("region")),
        coal_influence=_parse_float(cell("coal_influence")),
        pm25=_parse_float(cell("pm25")),
        ihd_count=_parse_count(cell("ihd")),
        person_years=_parse_float(cell("person_years")),
        latitude=_parse_float(cell("lat")),
        longitude=_parse_float(cell("lon")),
        covariates=tuple(_parse_float(cell(name)) for name in COVARIATE_NAMES),
    )


def write_zip_table(ds: Dataset, path) -> None:
    """Write a dataset back to canonical CSV (parse round-trips to equal records)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BASE_COLUMNS + COVARIATE_NAMES)
        for r in ds.records:
            writer.writerow(
                [
                    r.zip_id,
                    r.region.code,
                    repr(r.coal_influence),
                    repr(r.pm25),
                    r.ihd_count,
                    repr(r.person_years),
                    repr(r.latitude),
                    repr(r.longitude),
                ]
                + [repr(v) for v in r.covariates]
            )


def validate(ds: Dataset) -> list[Violation]:
    """Report every record-level invariant violation; empty list means clean."""
    violations = []

    def check(zip_id, rule, value, ok):
        if not ok:
            violations.append(Violation(zip_id=zip_id, rule=rule, value=value))

    for r in ds.records:
        check(r.zip_id, "ihd_count_nonnegative", r.ihd_count, r.ihd_count >= 0)
        check(r.zip_id, "person_years_positive", r.person_years, r.person_years > 0)
        check(r.zip_id, "coal_influence_nonnegative", r.coal_influence, r.coal_influence >= 0)
        check(r.zip_id, "pm25_nonnegative", r.pm25, r.pm25 >= 0)
        check(r.zip_id, "latitude_range", r.latitude, -90.0 <= r.latitude <= 90.0)
        check(r.zip_id, "longitude_range", r.longitude, -180.0 <= r.longitude <= 180.0)
        for name, value in zip(COVARIATE_NAMES, r.covariates):
            if name in PERCENT_COVARIATES:
                check(r.zip_id, f"{name}_in_unit_interval", value, 0.0 <= value <= 1.0)
    return violations


def split_by_region(ds: Dataset) -> dict[Region, Dataset]:
    """Partition into one dataset per region; empty regions yield empty datasets."""
    groups: dict[Region, list[ZipRecord]] = {region: [] for region in Region}
    for r in ds.records:
        groups[r.region].append(r)
    return {
        region: Dataset(
            records=tuple(records),
            provenance=Provenance(
                source=ds.provenance.source,
                accepted=len(records),
                dropped=0,
                digest=ds.provenance.digest,
            ),
        )
        for region, records in groups.items()
    }
