import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from nuelab.pliss import (
    PlissProblem,
    hypotheses_hold,
    is_pliss_index,
    pliss_bruteforce,
    pliss_theta,
    pliss_times,
)


def test_constant_sequence():
    r = pliss_times(PlissProblem([2, 2, 2, 2], 1, 2, 3))
    assert r.indices == [1, 2, 3, 4]
    assert r.theta == 0.5
    assert r.guarantee_applies
    assert r.count > r.theta * 4


def test_late_jump():
    r = pliss_times(PlissProblem([0, 4], 1, 2, 4))
    assert r.indices == [2]
    assert r.theta == pytest.approx(1 / 3)
    assert r.count > r.theta * 2


def test_single_element():
    assert pliss_bruteforce(PlissProblem([5], 1, 2, 5)).indices == [1]


def test_all_negative():
    r = pliss_bruteforce(PlissProblem([-1, -1], 0.5, 1, 1))
    assert r.indices == []
    assert not r.guarantee_applies


def test_ties_are_accepted():
    # a_1 = c1 exactly: the window sum equals c1 * 1
    assert pliss_times(PlissProblem([1.0], 1.0, 2.0, 3.0)).indices == [1]


def test_degenerate_constants():
    assert np.isnan(pliss_theta(1.0, 2.0, 1.0))
    r = pliss_times(PlissProblem([1.0, 1.0], 1.0, 1.0, 2.0))
    assert not r.guarantee_applies
    assert r.indices == [1, 2]


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        PlissProblem([], 1, 2, 3)


sequences = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=200)


@given(sequences, st.floats(0.01, 3))
def test_scan_matches_bruteforce(a, c1):
    p = PlissProblem(a, c1, c1 + 1, 5.0)
    assert pliss_times(p).indices == pliss_bruteforce(p).indices


@given(st.lists(st.integers(-4, 4), min_size=1, max_size=60), st.integers(1, 3))
def test_scan_matches_bruteforce_with_ties(a, c1):
    # integer data makes equality in the window sums common
    p = PlissProblem([float(v) for v in a], float(c1), c1 + 0.5, 4.0)
    assert pliss_times(p).indices == pliss_bruteforce(p).indices


@given(sequences, st.floats(0.01, 3))
def test_membership_and_completeness(a, c1):
    idx = set(pliss_times(PlissProblem(a, c1, c1 + 1, 5.0)).indices)
    for i in range(1, len(a) + 1):
        assert (i in idx) == is_pliss_index(a, c1, i)


@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=200),
    st.floats(0.0, 0.9),
    st.floats(0.05, 0.95),
)
def test_counting_bound(u, c1_frac, frac):
    # constants drawn inside the admissible range of each sequence
    A = 1.0
    a = list(np.asarray(u) * A)
    mean = float(np.mean(a))
    c1 = c1_frac * mean
    c2 = c1 + frac * (mean - c1)
    assume(0 < c1 < c2 < A)
    p = PlissProblem(a, c1, c2, A)
    assume(hypotheses_hold(p))
    r = pliss_times(p)
    assert r.guarantee_applies
    assert r.count > r.theta * len(a)
