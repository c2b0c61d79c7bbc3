import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iovfl.areas import kmeans_binary, squared_distance, total_aadf, write_partition_csv
from iovfl.ingestion import AreaRecord


def _split_objective(v, mask):
    lo, hi = v[~mask], v[mask]
    return float(np.sum((lo - lo.mean()) ** 2) + np.sum((hi - hi.mean()) ** 2))


def brute_force_two_groups(values):
    """Best split over every assignment of areas to two non-empty groups."""
    ids = sorted(values)
    v = np.array([values[i] for i in ids], dtype=float)
    best = None
    for bits in itertools.product([0, 1], repeat=len(v)):
        mask = np.array(bits, dtype=bool)
        if mask.all() or not mask.any():
            continue
        obj = _split_objective(v, mask)
        if best is None or obj < best[0] - 1e-12:
            best = (obj, mask)
    return best


def test_total_aadf_full_year():
    recs = [AreaRecord(1, 2020, d, 365.0) for d in range(1, 366)]
    assert total_aadf(recs) == {1: pytest.approx(365.0)}


def test_total_aadf_single_record():
    assert total_aadf([AreaRecord(7, 2020, 40, 730.0)]) == {7: pytest.approx(2.0)}


def test_total_aadf_two_areas_independent():
    out = total_aadf([AreaRecord(1, 2020, 1, 365.0), AreaRecord(2, 2021, 2, 730.0)])
    assert out == {1: pytest.approx(1.0), 2: pytest.approx(2.0)}


def test_total_aadf_empty():
    with pytest.raises(ValueError):
        total_aadf([])


def test_two_points():
    p = kmeans_binary({1: 0.0, 2: 10.0})
    assert p.assignments == {1: 0, 2: 1}
    assert (p.centroid_low, p.centroid_high) == (0.0, 10.0)


def test_four_points_against_enumeration():
    values = {1: 1.0, 2: 2.0, 3: 100.0, 4: 101.0}
    _, mask = brute_force_two_groups(values)
    assert [int(b) for b in mask] == [0, 0, 1, 1]
    p = kmeans_binary(values)
    assert p.assignments == {1: 0, 2: 0, 3: 1, 4: 1}
    assert p.centroid_low == pytest.approx(1.5) and p.centroid_high == pytest.approx(100.5)


def test_order_independent():
    a = kmeans_binary({1: 5.0, 2: 1.0, 3: 9.0, 4: 7.0})
    b = kmeans_binary(dict(reversed(list({1: 5.0, 2: 1.0, 3: 9.0, 4: 7.0}.items()))))
    assert a.assignments == b.assignments


def test_extremes_init_can_stop_in_local_optimum():
    values = {1: 0.0, 2: 39.0, 3: 19.0, 4: 0.0}
    local = kmeans_binary(values, init="extremes")
    best = kmeans_binary(values)
    assert local.assignments == {1: 0, 2: 1, 3: 0, 4: 0}
    assert best.assignments == {1: 0, 2: 1, 3: 1, 4: 0}
    assert best.objective_trace[-1] < local.objective_trace[-1]


def test_tie_goes_to_high_group():
    p = kmeans_binary({1: 0.0, 2: 5.0, 3: 10.0}, init="extremes")
    # 5 is equidistant from the initial centroids 0 and 10
    assert p.assignments[2] == 1


def test_identical_values_rejected():
    with pytest.raises(ValueError):
        kmeans_binary({1: 3.0, 2: 3.0})
    with pytest.raises(ValueError):
        kmeans_binary({1: 3.0})


def test_unknown_area_lookup():
    p = kmeans_binary({1: 0.0, 2: 1.0})
    with pytest.raises(KeyError):
        p.group(99)


def test_partition_csv(tmp_path):
    p = kmeans_binary({2: 0.0, 1: 10.0})
    write_partition_csv(p, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text() == "area_id,group\n1,1\n2,0\n"


values_strategy = st.dictionaries(
    st.integers(1, 1000), st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=12,
).filter(lambda d: len(set(d.values())) >= 2)


@settings(max_examples=150, deadline=None)
@given(values_strategy)
def test_matches_best_threshold_split(values):
    p = kmeans_binary(values)
    ids = sorted(values)
    v = np.array([values[i] for i in ids])
    groups = np.array([p.assignments[i] for i in ids])
    assert set(np.unique(groups)) <= {0, 1}
    order = np.argsort(v, kind="stable")
    best = min(_split_objective(v, np.isin(np.arange(v.size), order[k:]))
               for k in range(1, v.size) if v[order[k - 1]] < v[order[k]])
    got = squared_distance(v, groups, p.centroid_low, p.centroid_high)
    assert got <= best + 1e-6 * max(1.0, best)


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.integers(1, 50), st.integers(0, 30).map(float), min_size=2, max_size=8)
       .filter(lambda d: len(set(d.values())) >= 2))
def test_matches_full_enumeration(values):
    best, _ = brute_force_two_groups(values)
    p = kmeans_binary(values)
    ids = sorted(values)
    v = np.array([values[i] for i in ids])
    groups = np.array([p.assignments[i] for i in ids])
    assert squared_distance(v, groups, p.centroid_low, p.centroid_high) == pytest.approx(best, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(values_strategy, st.sampled_from(["optimal", "extremes"]))
def test_objective_non_increasing_and_assignment_consistent(values, init):
    p = kmeans_binary(values, init=init)
    trace = np.array(p.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9 * max(1.0, trace.max()))
    assert p.centroid_low <= p.centroid_high
    for a, g in p.assignments.items():
        d_own = abs(values[a] - (p.centroid_high if g else p.centroid_low))
        d_other = abs(values[a] - (p.centroid_low if g else p.centroid_high))
        assert d_own <= d_other + 1e-12
