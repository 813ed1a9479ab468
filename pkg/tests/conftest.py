import io

import numpy as np
import pytest

from expomatch import glm
from expomatch.datamodel import BASE_COLUMNS, COVARIATE_NAMES, Region, parse_zip_table

# region codes cycle so small tables exercise the region split
_REGIONS = ("NE", "SE", "IMW")


def make_csv(rows: list[dict]) -> bytes:
    """Build an input CSV from row dicts; unspecified fields get sane defaults."""
    header = BASE_COLUMNS + COVARIATE_NAMES
    lines = [",".join(header)]
    for i, row in enumerate(rows):
        defaults = {
            "zip": f"Z{i:04d}",
            "region": _REGIONS[i % 3],
            "coal_influence": "2.0",
            "pm25": "12.0",
            "ihd": "5",
            "person_years": "300.0",
            "lat": "40.0",
            "lon": "-75.0",
        }
        for name in COVARIATE_NAMES:
            defaults[name] = "0.5"
        defaults["logPop"] = "8.0"
        defaults["MedianHHInc"] = "40.0"
        defaults["MedianHValue"] = "100.0"
        defaults["mean_age"] = "75.0"
        defaults["avtmpf"] = "285.0"
        defaults["avrelh"] = "0.01"
        defaults["smokerate2000"] = "0.27"
        defaults.update({k: str(v) for k, v in row.items()})
        lines.append(",".join(defaults[c] for c in header))
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_rows(rows: list[dict]):
    return parse_zip_table(io.BytesIO(make_csv(rows)))


def design(columns: dict[str, np.ndarray]) -> glm.DesignMatrix:
    """Design matrix with an intercept prepended."""
    names = ["intercept"] + list(columns)
    n = len(next(iter(columns.values())))
    values = np.column_stack([np.ones(n)] + [np.asarray(v, dtype=float) for v in columns.values()])
    return glm.DesignMatrix(tuple(names), values)


@pytest.fixture
def toy_dataset():
    """Nine records across all regions with valid fields."""
    return parse_rows([{"zip": f"T{i:03d}", "region": _REGIONS[i % 3]} for i in range(9)])
