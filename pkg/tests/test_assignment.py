import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radarcorr.assignment import AssignmentError, solve_max, solve_min


def brute_force(m, maximize=False):
    """Best objective over every injective row->column (or column->row) map."""
    m = np.asarray(m)
    L, K = m.shape
    best = None
    if L <= K:
        for cols in itertools.permutations(range(K), L):
            v = m[np.arange(L), list(cols)].sum()
            if best is None or (v > best if maximize else v < best):
                best = v
    else:
        for rows in itertools.permutations(range(L), K):
            v = m[list(rows), np.arange(K)].sum()
            if best is None or (v > best if maximize else v < best):
                best = v
    return best


def assert_valid(res, shape):
    L, K = shape
    assert len(res.rows) == min(L, K)
    assert len(set(res.rows.tolist())) == len(res.rows)
    assert len(set(res.cols.tolist())) == len(res.cols)
    assert res.rows.min() >= 0 and res.rows.max() < L
    assert res.cols.min() >= 0 and res.cols.max() < K


def test_zero_diagonal():
    res = solve_min([[0, 1], [1, 0]])
    assert set(res.pairs) == {(0, 0), (1, 1)} and res.objective == 0


def test_single_row():
    res = solve_min([[5, 2, 7]])
    assert res.pairs == [(0, 1)] and res.objective == 2


def test_identity_max():
    res = solve_max([[1, 0], [0, 1]])
    assert set(res.pairs) == {(0, 0), (1, 1)} and res.objective == 2


def test_objective_is_sum_of_entries():
    m = np.random.default_rng(0).normal(size=(6, 9))
    res = solve_min(m)
    assert res.objective == m[res.rows, res.cols].sum()


@pytest.mark.parametrize("shape", [(5, 5), (4, 6)])
def test_min_matches_enumeration(shape):
    rng = np.random.default_rng(sum(shape))
    for k in range(500):
        if k % 2:
            m = rng.integers(-50, 50, size=shape)
            res = solve_min(m)
            assert res.objective == brute_force(m)
        else:
            m = rng.normal(size=shape)
            res = solve_min(m)
            assert abs(res.objective - brute_force(m)) <= 1e-12
        assert_valid(res, shape)


def test_max_matches_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        m = rng.normal(size=(6, 4))
        res = solve_max(m)
        assert_valid(res, m.shape)
        assert abs(res.objective - brute_force(m, maximize=True)) <= 1e-12


def test_max_is_negated_min():
    rng = np.random.default_rng(12)
    for _ in range(500):
        m = rng.normal(size=tuple(rng.integers(1, 7, size=2)))
        assert abs(solve_max(m).objective + solve_min(-m).objective) <= 1e-12


def test_agrees_with_scipy_on_large():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(13)
    for shape in [(40, 40), (35, 41), (60, 20)]:
        m = rng.normal(size=shape)
        r, c = scipy_opt.linear_sum_assignment(m)
        assert abs(solve_min(m).objective - m[r, c].sum()) <= 1e-9


def test_deterministic():
    m = np.random.default_rng(14).integers(0, 3, size=(8, 8))  # many ties
    a, b = solve_min(m), solve_min(m.copy())
    assert a.pairs == b.pairs


def test_rejects_nonfinite():
    with pytest.raises(AssignmentError):
        solve_min([[1.0, np.inf]])
    with pytest.raises(AssignmentError):
        solve_max([[np.nan]])


def test_rejects_empty():
    with pytest.raises(AssignmentError):
        solve_min(np.zeros((0, 3)))


matrices = st.integers(1, 7).flatmap(
    lambda l: st.integers(1, 7).flatmap(
        lambda k: arrays(np.int64, (l, k), elements=st.integers(-100, 100))))


@settings(max_examples=150, deadline=None)
@given(matrices)
def test_optimal_up_to_7x7(m):
    res = solve_min(m)
    assert_valid(res, m.shape)
    assert res.objective == brute_force(m)


@settings(max_examples=100, deadline=None)
@given(matrices)
def test_transpose_symmetry(m):
    a, b = solve_min(m), solve_min(m.T)
    assert a.objective == b.objective
    assert m.T[b.rows, b.cols].sum() == b.objective


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: arrays(np.int64, (n, n), elements=st.integers(-50, 50))),
       st.integers(-1000, 1000))
def test_constant_shift(m, c):
    base = solve_min(m)
    shifted = solve_min(m + c)
    assert shifted.objective == base.objective + m.shape[0] * c
    # the original optimal pairing stays optimal after the shift
    assert (m + c)[base.rows, base.cols].sum() == shifted.objective
