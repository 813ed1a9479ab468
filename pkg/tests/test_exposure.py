import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import parse_rows
from expomatch.errors import EmptyReferenceError, WeightSumViolationError
from expomatch.exposure import (
    ExposureLabel,
    GridCell,
    aggregate_grid,
    classify,
    influence_percentile,
)


def ds_with_influences(values):
    return parse_rows(
        [{"zip": f"Z{i:03d}", "coal_influence": v, "region": "NE"} for i, v in enumerate(values)]
    )


def test_classify_inclusive_boundary():
    summary = classify(ds_with_influences([3.9, 4.0, 4.1]), cutoff=4.0)
    labels = [a.label for a in summary]
    assert labels == [ExposureLabel.Control, ExposureLabel.HighExposed, ExposureLabel.HighExposed]
    assert summary.n_high_exposed == 2
    assert summary.n_control == 1


def test_classify_cutoff_above_max():
    summary = classify(ds_with_influences([1.0, 2.0, 3.0]), cutoff=5.0)
    assert summary.n_high_exposed == 0
    assert all(a.label is ExposureLabel.Control for a in summary)


def test_classify_requires_positive_cutoff():
    with pytest.raises(ValueError):
        classify(ds_with_influences([1.0]), cutoff=0.0)


@settings(max_examples=50, deadline=None)
@given(
    influences=st.lists(st.floats(min_value=0, max_value=10, allow_nan=False), min_size=1, max_size=20),
    cutoffs=st.tuples(st.floats(min_value=0.1, max_value=9), st.floats(min_value=0.1, max_value=9)),
)
def test_classify_monotone_nesting(influences, cutoffs):
    lo, hi = sorted(cutoffs)
    ds = ds_with_influences(influences)
    high_lo = {a.zip_id for a in classify(ds, lo) if a.treated}
    high_hi = {a.zip_id for a in classify(ds, hi) if a.treated}
    assert high_hi <= high_lo


def test_aggregate_single_cell_identity():
    cells = [GridCell("c1", 5.0, {"Z1": 1.0})]
    assert aggregate_grid(cells) == {"Z1": 5.0}


def test_aggregate_symmetric_mean():
    cells = [GridCell("c1", 2.0, {"Z1": 0.5}), GridCell("c2", 6.0, {"Z1": 0.5})]
    assert aggregate_grid(cells)["Z1"] == pytest.approx(4.0)


def test_aggregate_weighted_mean():
    cells = [
        GridCell("c1", 1.0, {"Z1": 0.2}),
        GridCell("c2", 2.0, {"Z1": 0.3}),
        GridCell("c3", 3.0, {"Z1": 0.5}),
    ]
    assert aggregate_grid(cells)["Z1"] == pytest.approx(2.3)


def test_aggregate_weight_sum_violation():
    cells = [GridCell("c1", 1.0, {"Z1": 0.7})]
    with pytest.raises(WeightSumViolationError):
        aggregate_grid(cells)


def test_aggregate_linear_in_influence():
    base = [GridCell("c1", 1.5, {"Z1": 0.4}), GridCell("c2", 3.5, {"Z1": 0.6})]
    doubled = [GridCell(c.cell_id, 2 * c.influence, c.area_weight_per_zip) for c in base]
    assert aggregate_grid(doubled)["Z1"] == pytest.approx(2 * aggregate_grid(base)["Z1"])


def test_percentile_definition():
    assert influence_percentile(8, list(range(1, 11))) == pytest.approx(80.0)


def test_percentile_below_min():
    assert influence_percentile(0.5, [1.0, 2.0, 3.0]) == 0.0


def test_percentile_tied_block():
    assert influence_percentile(2, [1, 2, 2, 2, 5]) == pytest.approx(80.0)


def test_percentile_empty_reference():
    with pytest.raises(EmptyReferenceError):
        influence_percentile(1.0, [])
