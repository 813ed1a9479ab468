"""1:1 nearest-neighbor propensity-score matching within region.

Match distance is the absolute propensity-score difference; the caliper
constraint is enforced on the logit-PS scale (where it is defined as a
multiple of the pooled SD). Treated units are processed hardest-first
(decreasing PS, then ascending id); a treated unit takes the nearest
unused control within the caliper, breaking distance ties toward the
smallest control id. These ordering rules fully determine the output, so
matching is input-order invariant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyOverlapError, InsufficientUnitsError

CALIPER_FACTOR = 0.2


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class PsUnit:
    """One unit entering the matching stage."""

    zip_id: str
    treated: bool
    ps: float
    logit_ps: float
    region: object = None
    latitude: float | None = None
    longitude: float | None = None

    @classmethod
    def from_ps(cls, zip_id, treated, ps, region=None, latitude=None, longitude=None):
        return cls(
            zip_id=zip_id,
            treated=bool(treated),
            ps=float(ps),
            logit_ps=logit(float(ps)),
            region=region,
            latitude=latitude,
            longitude=longitude,
        )


@dataclass
class MatchedSet:
    """Pairs plus everything that did not pair, partitioning the input units."""

    pairs: list[tuple[str, str]]
    unmatched_treated: list[str]
    unmatched_control: list[str]
    discarded: list[str] = field(default_factory=list)
    caliper: float = 0.0
    region: object = None

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def treated_ids(self) -> list[str]:
        return [t for t, _ in self.pairs]

    def control_ids(self) -> list[str]:
        return [c for _, c in self.pairs]


def compute_caliper(units: list[PsUnit], factor: float = CALIPER_FACTOR) -> float:
    """Caliper as a multiple of the pooled SD of the logit propensity score.

    Pooled SD is sqrt((s2_t + s2_c) / 2) with n-1 sample variances, so two
    groups whose logit-PS SD is 1.9 give the 0.38 default-factor caliper.
    """
    t = [u.logit_ps for u in units if u.treated]
    c = [u.logit_ps for u in units if not u.treated]
    if len(t) < 2 or len(c) < 2:
        raise InsufficientUnitsError("caliper needs at least 2 units per group")
    var_t = float(np.var(t, ddof=1))
    var_c = float(np.var(c, ddof=1))
    return factor * math.sqrt((var_t + var_c) / 2.0)


def trim_support(units: list[PsUnit]) -> tuple[list[PsUnit], list[PsUnit]]:
    """Drop units strictly outside the mutual support of the PS distributions.

    Returns (kept, discarded). The mutual support is
    [max(min_t, min_c), min(max_t, max_c)] on the probability scale.
    """
    t = [u.ps for u in units if u.treated]
    c = [u.ps for u in units if not u.treated]
    if not t or not c:
        raise InsufficientUnitsError("support trimming needs both groups nonempty")
    lo = max(min(t), min(c))
    hi = min(max(t), max(c))
    if lo > hi:
        raise EmptyOverlapError("treated and control PS supports are disjoint")
    kept = [u for u in units if lo <= u.ps <= hi]
    discarded = [u for u in units if not (lo <= u.ps <= hi)]
    return kept, discarded


def _check_single_region(units: list[PsUnit]) -> object:
    regions = {u.region for u in units}
    if len(regions) > 1:
        raise ValueError(f"units span multiple regions: {regions}")
    return next(iter(regions)) if regions else None


def nn_match(units: list[PsUnit], caliper: float) -> MatchedSet:
    """Greedy 1:1 nearest-neighbor matching without replacement.

    Parameters
    ----------
    units : list of PsUnit
        Support-trimmed units from a single region.
    caliper : float
        Maximum allowed |logit PS difference| within a pair (inclusive).

    Returns
    -------
    MatchedSet
        Pairs in processing order; unmatched ids sorted ascending.
    """
    if caliper < 0:
        raise ValueError("caliper must be nonnegative")
    region = _check_single_region(units)

    treated = sorted((u for u in units if u.treated), key=lambda u: (-u.logit_ps, u.zip_id))
    controls = sorted((u for u in units if not u.treated), key=lambda u: u.zip_id)
    control_ps = np.array([c.ps for c in controls], dtype=float)
    control_logits = np.array([c.logit_ps for c in controls], dtype=float)
    alive = np.ones(len(controls), dtype=bool)

    pairs: list[tuple[str, str]] = []
    unmatched_treated: list[str] = []
    for t in treated:
        eligible = alive & (np.abs(control_logits - t.logit_ps) <= caliper)
        if not eligible.any():
            unmatched_treated.append(t.zip_id)
            continue
        dist = np.abs(control_ps - t.ps)
        dist[~eligible] = np.inf
        # controls are in ascending id order, so argmin's first-minimum rule
        # breaks distance ties toward the smallest control id
        j = int(np.argmin(dist))
        pairs.append((t.zip_id, controls[j].zip_id))
        alive[j] = False

    unmatched_control = [c.zip_id for c, keep in zip(controls, alive) if keep]
    return MatchedSet(
        pairs=pairs,
        unmatched_treated=sorted(unmatched_treated),
        unmatched_control=unmatched_control,
        discarded=[],
        caliper=caliper,
        region=region,
    )


def match_with_trim(units: list[PsUnit], caliper_factor: float = CALIPER_FACTOR) -> MatchedSet:
    """Full matching sequence: trim support, compute the caliper on the
    post-trim units, then match. Discarded ids are recorded in the result."""
    kept, discarded = trim_support(units)
    caliper = compute_caliper(kept, factor=caliper_factor)
    matched = nn_match(kept, caliper)
    matched.discarded = sorted(u.zip_id for u in discarded)
    return matched


def write_matched_set(matched: MatchedSet, units: list[PsUnit], path) -> None:
    """Audit CSV with one row per pair."""
    by_id = {u.zip_id: u for u in units}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["treated_zip", "control_zip", "treated_ps", "control_ps", "abs_logit_diff"])
        for t_id, c_id in matched.pairs:
            t, c = by_id[t_id], by_id[c_id]
            writer.writerow(
                [t_id, c_id, repr(t.ps), repr(c.ps), repr(abs(t.logit_ps - c.logit_ps))]
            )
