import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import parse_rows
from expomatch.datamodel import COVARIATE_NAMES
from expomatch.diagnostics import balance_table, quintile_strata, smd, write_balance_csv
from expomatch.errors import (
    DegenerateQuantilesError,
    InsufficientUnitsError,
    ZeroPooledSdError,
    ZeroPooledSdWarning,
)
from expomatch.matching import MatchedSet, PsUnit

RNG = np.random.default_rng(5150)


def ps_unit(zip_id, ps, treated=False):
    return PsUnit.from_ps(zip_id, treated, ps, region="NE")


# -- smd ----------------------------------------------------------------------

def test_smd_identical_vectors():
    assert smd([1.0, 3.0], [1.0, 3.0]) == 0.0


def test_smd_hand_value():
    assert smd([1.0, 3.0], [0.0, 2.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_smd_antisymmetric():
    assert smd([0.0, 2.0], [1.0, 3.0]) == pytest.approx(-1 / math.sqrt(2), abs=1e-12)


def test_smd_zero_pooled_sd_equal_means_warns():
    with pytest.warns(ZeroPooledSdWarning):
        assert smd([2.0, 2.0], [2.0, 2.0]) == 0.0


def test_smd_zero_pooled_sd_unequal_means_raises():
    with pytest.raises(ZeroPooledSdError):
        smd([2.0, 2.0], [3.0, 3.0])


def test_smd_needs_two_per_group():
    with pytest.raises(InsufficientUnitsError):
        smd([1.0], [1.0, 2.0])


def test_smd_shift_invariance():
    t = [0.3, 1.2, 0.9]
    c = [0.1, 0.5, 1.4]
    assert smd([v + 100 for v in t], [v + 100 for v in c]) == pytest.approx(
        smd(t, c), abs=1e-10
    )


@settings(max_examples=40, deadline=None)
@given(
    t=st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=8),
    c=st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=8),
    power=st.integers(min_value=-6, max_value=6),
    sign=st.sampled_from([-1.0, 1.0]),
)
def test_smd_scale_identity_exact_for_binary_scales(t, c, power, sign):
    # scaling both groups by a power of two is exact in floating point, so
    # smd(c*x_t, c*x_c) == sign(c) * smd(x_t, x_c) holds as an identity
    if np.var(t, ddof=1) + np.var(c, ddof=1) == 0:
        return
    scale = sign * 2.0**power
    base = smd(t, c)
    scaled = smd([scale * v for v in t], [scale * v for v in c])
    assert scaled == math.copysign(1.0, scale) * base


def test_smd_scale_identity_approximate_general():
    t = [0.3, 1.2, 0.9, 2.2]
    c = [0.1, 0.5, 1.4, 0.8]
    for scale in (3.7, -0.21, 123.456):
        assert smd([scale * v for v in t], [scale * v for v in c]) == pytest.approx(
            math.copysign(1.0, scale) * smd(t, c), rel=1e-12
        )


# -- balance table --------------------------------------------------------------

def _toy_region(n=8):
    rows = []
    for i in range(n):
        rows.append(
            {
                "zip": f"Z{i:03d}",
                "region": "NE",
                "smokerate2000": 0.2 + 0.01 * i,
                "logPop": 7.0 + 0.2 * (i % 4),
            }
        )
    return parse_rows(rows)


def test_balance_table_reconciles_with_direct_smd():
    ds = _toy_region()
    assignment = {r.zip_id: (i % 2 == 0) for i, r in enumerate(ds.records)}
    table = balance_table(ds, assignment, region="NE")
    assert len(table.rows) == len(COVARIATE_NAMES)
    for j, row in enumerate(table.rows):
        t = [r.covariates[j] for r in ds.records if assignment[r.zip_id]]
        c = [r.covariates[j] for r in ds.records if not assignment[r.zip_id]]
        if row.raw_smd != 0.0:
            assert row.raw_smd == pytest.approx(smd(t, c), abs=1e-12)
        assert row.matched_smd is None


def test_balance_table_matched_equals_raw_when_fully_matched():
    ds = _toy_region()
    assignment = {r.zip_id: (i % 2 == 0) for i, r in enumerate(ds.records)}
    treated = [r.zip_id for r in ds.records if assignment[r.zip_id]]
    controls = [r.zip_id for r in ds.records if not assignment[r.zip_id]]
    matched = MatchedSet(
        pairs=list(zip(treated, controls)),
        unmatched_treated=[],
        unmatched_control=[],
        caliper=1.0,
        region="NE",
    )
    table = balance_table(ds, assignment, matched, region="NE")
    for row in table.rows:
        assert row.matched_smd == pytest.approx(row.raw_smd, abs=1e-12)
    assert table.n_matched_pairs == len(treated)


def test_balance_table_requires_full_assignment():
    ds = _toy_region()
    with pytest.raises(ValueError):
        balance_table(ds, {}, region="NE")


def test_write_balance_csv(tmp_path):
    ds = _toy_region()
    assignment = {r.zip_id: (i % 2 == 0) for i, r in enumerate(ds.records)}
    table = balance_table(ds, assignment, region="NE")
    path = tmp_path / "balance.csv"
    write_balance_csv(table, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 1 + len(COVARIATE_NAMES)
    assert lines[0].startswith("covariate,mean_treated")


# -- stratification --------------------------------------------------------------

def test_quintile_strata_even_split():
    units = [ps_unit(f"U{i}", 0.1 + 0.08 * i) for i in range(10)]
    strata = quintile_strata(units, k=5)
    assert strata.sizes() == [2, 2, 2, 2, 2]


def test_quintile_strata_seven_units():
    units = [ps_unit(f"U{i}", 0.1 + 0.1 * i) for i in range(7)]
    strata = quintile_strata(units, k=5)
    assert strata.sizes() == [2, 1, 2, 1, 1]


def test_quintile_strata_all_equal_raises():
    units = [ps_unit(f"U{i}", 0.5) for i in range(10)]
    with pytest.raises(DegenerateQuantilesError):
        quintile_strata(units, k=5)


def test_quintile_strata_insufficient():
    units = [ps_unit(f"U{i}", 0.2 + 0.1 * i) for i in range(3)]
    with pytest.raises(InsufficientUnitsError):
        quintile_strata(units, k=5)


def test_quintile_strata_k1_single_stratum():
    units = [ps_unit(f"U{i}", 0.2 + 0.1 * i) for i in range(4)]
    strata = quintile_strata(units, k=1)
    assert strata.sizes() == [4]
    assert strata.boundaries == []


def test_quintile_strata_ties_stay_low():
    # boundary value 0.3 is shared; tied units stay in the lower stratum
    units = [ps_unit(f"U{i}", p) for i, p in enumerate([0.1, 0.3, 0.3, 0.6, 0.8, 0.9])]
    strata = quintile_strata(units, k=2)
    assert strata.assignment["U1"] == strata.assignment["U2"] == 1


def test_quintile_strata_order_invariant():
    ps = list(RNG.uniform(0.05, 0.95, size=23))
    units = [ps_unit(f"U{i:03d}", p) for i, p in enumerate(ps)]
    strata1 = quintile_strata(units, k=5)
    shuffled = list(units)
    RNG.shuffle(shuffled)
    strata2 = quintile_strata(shuffled, k=5)
    assert strata1.assignment == strata2.assignment
    assert strata1.boundaries == strata2.boundaries
