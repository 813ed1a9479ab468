"""Binary exposure classification from the coal-influence surface,
plus grid-to-ZIP aggregation and percentile summaries."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

from .datamodel import Dataset
from .errors import EmptyReferenceError, WeightSumViolationError

DEFAULT_CUTOFF = 4.0
WEIGHT_SUM_TOL = 1e-6


class ExposureLabel(enum.Enum):
    HighExposed = "high"
    Control = "control"


@dataclass(frozen=True)
class ExposureAssignment:
    zip_id: str
    label: ExposureLabel
    cutoff: float
    influence: float

    @property
    def treated(self) -> bool:
        return self.label is ExposureLabel.HighExposed


@dataclass
class ClassificationSummary:
    """Assignments plus label counts; iterates like the assignment list."""

    assignments: list[ExposureAssignment]
    cutoff: float
    n_high_exposed: int
    n_control: int

    def __iter__(self):
        return iter(self.assignments)

    def __len__(self):
        return len(self.assignments)


def classify(ds: Dataset, cutoff: float) -> ClassificationSummary:
    """Label every record high-exposed or control at the given cutoff.

    The boundary is inclusive: influence equal to the cutoff is
    high-exposed. Raising the cutoff therefore never promotes a control.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    assignments = [
        ExposureAssignment(
            zip_id=r.zip_id,
            label=ExposureLabel.HighExposed if r.coal_influence >= cutoff else ExposureLabel.Control,
            cutoff=cutoff,
            influence=r.coal_influence,
        )
        for r in ds.records
    ]
    n_high = sum(1 for a in assignments if a.treated)
    return ClassificationSummary(
        assignments=assignments,
        cutoff=cutoff,
        n_high_exposed=n_high,
        n_control=len(assignments) - n_high,
    )


@dataclass(frozen=True)
class GridCell:
    """One model grid cell and its area weights into overlapping ZIPs."""

    cell_id: str
    influence: float
    area_weight_per_zip: dict[str, float]


def aggregate_grid(cells: list[GridCell]) -> dict[str, float]:
    """Area-weighted mean influence per ZIP.

    Each ZIP's weights over cells must sum to 1 within 1e-6; the weights
    themselves are externally supplied (no polygon math happens here).
    """
    totals: dict[str, float] = {}
    weight_sums: dict[str, float] = {}
    for cell in cells:
        for zip_id, weight in cell.area_weight_per_zip.items():
            if weight < 0:
                raise WeightSumViolationError(f"negative weight for {zip_id} in {cell.cell_id}")
            totals[zip_id] = totals.get(zip_id, 0.0) + weight * cell.influence
            weight_sums[zip_id] = weight_sums.get(zip_id, 0.0) + weight
    for zip_id, total in weight_sums.items():
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise WeightSumViolationError(f"weights for {zip_id} sum to {total!r}, not 1")
    return {zip_id: totals[zip_id] for zip_id in sorted(totals)}


def read_grid_csv(path) -> list[GridCell]:
    """Read the long-format grid file: cell_id, influence, zip, weight."""
    rows: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            cell = rows.setdefault(
                row["cell_id"], {"influence": float(row["influence"]), "weights": {}}
            )
            cell["weights"][row["zip"]] = float(row["weight"])
    return [
        GridCell(cell_id=cid, influence=data["influence"], area_weight_per_zip=data["weights"])
        for cid, data in sorted(rows.items())
    ]


def influence_percentile(value: float, reference: list[float]) -> float:
    """Percentile of a value in a reference sample, count-at-or-below convention."""
    if len(reference) == 0:
        raise EmptyReferenceError("reference sample is empty")
    at_or_below = sum(1 for v in reference if v <= value)
    return 100.0 * at_or_below / len(reference)
