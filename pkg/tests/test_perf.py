import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_auc, brute_force_hitting_time
from undersampling.errors import DataError, ParameterError
from undersampling.perf import (NEVER, HittingTimeMatrix, RunTrajectory, TargetSet, aoc, auc,
                                default_target_set, ecdf_value, first_hitting_times, trajectory_aoc)


# default_target_set

def test_default_targets_endpoints_and_ratio():
    ts = default_target_set(51, 1e2, 1e-8)
    assert len(ts) == 51
    assert ts.targets[0] == 100.0 and ts.targets[-1] == 1e-8
    ratios = np.array(ts.targets[1:]) / np.array(ts.targets[:-1])
    np.testing.assert_allclose(ratios, 10 ** -0.2, rtol=1e-12)


def test_default_targets_small_counts():
    assert default_target_set(2, 1e2, 1e-8).targets == (100.0, 1e-8)
    np.testing.assert_allclose(default_target_set(3, 1, 1e-4).targets, (1, 1e-2, 1e-4), rtol=1e-15)


@pytest.mark.parametrize("args", [(1, 1e2, 1e-8), (5, 1e-8, 1e2), (5, 1.0, 0.0), (2.5, 10, 1)])
def test_default_targets_rejects(args):
    with pytest.raises(ParameterError):
        default_target_set(*args)


def test_target_set_must_descend():
    with pytest.raises(ParameterError):
        TargetSet((1.0, 1.0))
    with pytest.raises(ParameterError):
        TargetSet(())


# RunTrajectory validation

@pytest.mark.parametrize("points", [
    [], [(0, 1.0)], [(2, 1.0), (2, 0.5)], [(1, 1.0), (2, 2.0)], [(1, -1.0)], [(1, math.nan)],
])
def test_trajectory_invariants(points):
    with pytest.raises(DataError):
        RunTrajectory.from_points(points)


# first hitting times

def test_hit_at_first_point():
    tr = RunTrajectory.from_points([(1, 50.0)])
    assert first_hitting_times(tr, TargetSet((100.0,)), 10).tolist() == [1.0]


def test_direct_lookup():
    tr = RunTrajectory.from_points([(1, 50.0), (10, 0.5)])
    row = first_hitting_times(tr, TargetSet((100.0, 1.0, 1e-8)), 100)
    assert row.tolist() == [1.0, 10.0, NEVER]


def test_precision_equal_to_target_counts_as_hit():
    tr = RunTrajectory.from_points([(3, 1.0)])
    assert first_hitting_times(tr, TargetSet((1.0,)), 5).tolist() == [3.0]


def test_budget_below_last_record():
    tr = RunTrajectory.from_points([(1, 5.0), (20, 1.0)])
    with pytest.raises(ParameterError):
        first_hitting_times(tr, TargetSet((1.0,)), 10)


@st.composite
def trajectories(draw):
    n = draw(st.integers(1, 12))
    evals = sorted(draw(st.sets(st.integers(1, 500), min_size=n, max_size=n)))
    precs = sorted(draw(st.lists(st.floats(0, 1e3), min_size=n, max_size=n)), reverse=True)
    return RunTrajectory.from_points(zip(evals, precs))


@given(trajectories(), st.integers(2, 15))
def test_hitting_times_match_linear_scan(tr, count):
    targets = default_target_set(count, 1e3, 1e-3)
    row = first_hitting_times(tr, targets, 500)
    expected = [brute_force_hitting_time(tr.points, t) for t in targets]
    assert row.tolist() == expected


# ECDF / AUC / AOC

def test_ecdf_examples():
    assert ecdf_value(HittingTimeMatrix.from_rows([[1, 1]], 10), 1) == 1.0
    assert ecdf_value(HittingTimeMatrix.from_rows([[NEVER]], 10), 7) == 0.0
    assert ecdf_value(HittingTimeMatrix.from_rows([[3], [NEVER]], 10), 5) == 0.5


def test_auc_examples():
    one = HittingTimeMatrix.from_rows([[1]], 100)
    assert (auc(one), aoc(one)) == (100.0, 0.0)
    none = HittingTimeMatrix.from_rows([[NEVER]], 100)
    assert (auc(none), aoc(none)) == (0.0, 100.0)
    half = HittingTimeMatrix.from_rows([[3], [NEVER]], 100)
    assert (auc(half), aoc(half)) == (49.0, 51.0)
    assert brute_force_auc(half.times, 100) == 49.0


def test_matrix_validation():
    with pytest.raises(DataError):
        HittingTimeMatrix.from_rows([[5, 3]], 10)  # harder target hit earlier
    with pytest.raises(DataError):
        HittingTimeMatrix.from_rows([[11]], 10)
    with pytest.raises(DataError):
        HittingTimeMatrix.from_rows([[1.5]], 10)
    with pytest.raises(ParameterError):
        HittingTimeMatrix.from_rows([[1]], 0)


@st.composite
def hit_matrices(draw, max_budget=300):
    budget = draw(st.integers(1, max_budget))
    n = draw(st.integers(1, 6))
    m = draw(st.integers(1, 8))
    rows = []
    for _ in range(n):
        vals = draw(st.lists(st.one_of(st.integers(1, budget).map(float), st.just(NEVER)),
                             min_size=m, max_size=m))
        rows.append(sorted(vals))
    return HittingTimeMatrix.from_rows(rows, budget)


@given(hit_matrices())
def test_auc_matches_grid_sum(h):
    assert auc(h) == pytest.approx(brute_force_auc(h.times, h.budget), abs=1e-9)
    assert auc(h) + aoc(h) == pytest.approx(h.budget, abs=1e-9)
    assert 0.0 <= aoc(h) <= h.budget


@given(hit_matrices(), st.data())
def test_auc_monotone_under_improvement(h, data):
    times = h.times.copy()
    finite = np.argwhere(np.isfinite(times))
    if finite.size == 0:
        return
    i, j = finite[data.draw(st.integers(0, len(finite) - 1))]
    new = data.draw(st.integers(1, int(times[i, j])))
    times[i, j] = new
    times[i] = np.sort(times[i])
    assert auc(HittingTimeMatrix(h.budget, times)) >= auc(h) - 1e-12


@given(hit_matrices())
def test_ecdf_monotone_and_counts(h):
    prev = 0.0
    for t in range(1, h.budget + 1, max(1, h.budget // 20)):
        v = ecdf_value(h, t)
        assert v >= prev
        assert v == np.count_nonzero(h.times <= t) / h.times.size
        prev = v


def test_trajectory_aoc_hand_value():
    tr = RunTrajectory.from_points([(1, 50.0), (10, 0.5)])
    targets = TargetSet((100.0, 1.0, 1e-8))
    # ECDF is 1/3 on t=1..9 and 2/3 on t=10..20
    expected = 20 - (9 / 3 + 11 * 2 / 3)
    assert trajectory_aoc(tr, targets, 20) == pytest.approx(expected, abs=1e-12)
