import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_csv, parse_rows
from expomatch.datamodel import (
    COVARIATE_NAMES,
    Dataset,
    Provenance,
    Region,
    parse_zip_table,
    split_by_region,
    validate,
    write_zip_table,
)
from expomatch.errors import DuplicateKeyError, EmptyDatasetError, MissingColumnError


def test_parse_all_valid_rows():
    ds = parse_rows([{"zip": "A1"}, {"zip": "A2"}, {"zip": "A3"}])
    assert len(ds) == 3
    assert ds.provenance.accepted == 3
    assert ds.provenance.dropped == 0


def test_parse_drops_row_with_blank_person_years():
    ds = parse_rows([{"zip": "A1"}, {"zip": "A2", "person_years": ""}])
    assert len(ds) == 1
    assert ds.provenance.dropped == 1


def test_parse_drops_unparseable_and_nonfinite():
    ds = parse_rows([{"zip": "A1"}, {"zip": "A2", "pm25": "abc"}, {"zip": "A3", "lat": "nan"}])
    assert [r.zip_id for r in ds.records] == ["A1"]
    assert ds.provenance.dropped == 2


def test_parse_duplicate_zip_raises():
    with pytest.raises(DuplicateKeyError):
        parse_rows([{"zip": "A1"}, {"zip": "A1"}])


def test_parse_missing_column_raises():
    data = b"zip,region\nA1,NE\n"
    with pytest.raises(MissingColumnError):
        parse_zip_table(io.BytesIO(data))


def test_parse_empty_raises():
    with pytest.raises(EmptyDatasetError):
        parse_rows([{"zip": "A1", "person_years": ""}])


def test_parse_sorts_by_zip_id():
    ds = parse_rows([{"zip": "B"}, {"zip": "A"}, {"zip": "C"}])
    assert [r.zip_id for r in ds.records] == ["A", "B", "C"]


def test_parse_schema_remap():
    raw = make_csv([{"zip": "A1"}]).decode()
    header, row = raw.splitlines()
    remapped = header.replace("zip,", "zip_code,").replace(",ihd,", ",events,")
    data = (remapped + "\n" + row + "\n").encode()
    ds = parse_zip_table(io.BytesIO(data), schema={"zip": "zip_code", "ihd": "events"})
    assert ds.records[0].zip_id == "A1"
    assert ds.records[0].ihd_count == 5


def test_parse_deterministic():
    data = make_csv([{"zip": "A1"}, {"zip": "A2", "lat": ""}])
    ds1 = parse_zip_table(io.BytesIO(data))
    ds2 = parse_zip_table(io.BytesIO(data))
    assert ds1 == ds2  # provenance timestamp excluded from equality
    assert ds1.provenance.dropped == ds2.provenance.dropped == 1


def test_validate_clean(toy_dataset):
    assert validate(toy_dataset) == []


def test_validate_flags_pct_out_of_range():
    ds = parse_rows([{"zip": "A1"}, {"zip": "A2", "PctUrban": "1.5"}])
    violations = validate(ds)
    assert len(violations) == 1
    assert violations[0].zip_id == "A2"
    assert violations[0].rule == "PctUrban_in_unit_interval"


def test_validate_flags_latitude():
    ds = parse_rows([{"zip": "A1", "lat": "95"}])
    violations = validate(ds)
    assert [v.rule for v in violations] == ["latitude_range"]


def test_validate_flags_zero_person_years():
    ds = parse_rows([{"zip": "A1", "person_years": "0.0"}])
    assert [v.rule for v in validate(ds)] == ["person_years_positive"]


def test_split_by_region_counts():
    ds = parse_rows(
        [{"zip": "A", "region": "NE"}, {"zip": "B", "region": "NE"}, {"zip": "C", "region": "SE"}]
    )
    parts = split_by_region(ds)
    assert len(parts[Region.Northeast]) == 2
    assert len(parts[Region.Southeast]) == 1
    assert len(parts[Region.IndustrialMidwest]) == 0


def test_split_single_region():
    ds = parse_rows([{"zip": "A", "region": "IMW"}, {"zip": "B", "region": "IMW"}])
    parts = split_by_region(ds)
    assert len(parts[Region.IndustrialMidwest]) == 2
    assert all(len(parts[r]) == 0 for r in (Region.Northeast, Region.Southeast))


def test_split_empty_dataset():
    empty = Dataset(records=(), provenance=Provenance(source="x", accepted=0, dropped=0))
    parts = split_by_region(empty)
    assert set(parts) == set(Region)
    assert all(len(p) == 0 for p in parts.values())


def test_split_disjoint_exhaustive(toy_dataset):
    parts = split_by_region(toy_dataset)
    ids = [r.zip_id for p in parts.values() for r in p.records]
    assert sorted(ids) == [r.zip_id for r in toy_dataset.records]
    for region, part in parts.items():
        assert all(r.region is region for r in part.records)
        assert [r.zip_id for r in part.records] == sorted(r.zip_id for r in part.records)


def test_round_trip(tmp_path, toy_dataset):
    path = tmp_path / "echo.csv"
    write_zip_table(toy_dataset, path)
    again = parse_zip_table(str(path))
    assert again.records == toy_dataset.records
    assert again.provenance.accepted == toy_dataset.provenance.accepted


@settings(max_examples=25, deadline=None)
@given(
    values=st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).map(lambda v: round(v, 6)),
        min_size=3,
        max_size=3,
    )
)
def test_round_trip_arbitrary_floats(tmp_path_factory, values):
    ds = parse_rows(
        [{"zip": "A1", "coal_influence": abs(values[0]), "lat": values[1] % 90,
          "MedianHHInc": values[2]}]
    )
    path = tmp_path_factory.mktemp("rt") / "echo.csv"
    write_zip_table(ds, path)
    assert parse_zip_table(str(path)).records == ds.records
