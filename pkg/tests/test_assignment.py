import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from permset.assignment import (
    NonFiniteCostError,
    SizeLimitError,
    all_permutations,
    brute_force_assignment,
    hungarian,
    lehmer_decode,
    lehmer_encode,
)

EXAMPLES = [
    ([[0, 1], [1, 0]], 0.0, (0, 1)),
    ([[4, 1, 3], [2, 0, 5], [3, 2, 2]], 5.0, (1, 0, 2)),
    ([[5, 1, 9], [9, 5, 1]], 2.0, (1, 2)),
]


@pytest.mark.parametrize("cost, value, perm", EXAMPLES)
def test_hungarian_examples(cost, value, perm):
    res = hungarian(cost)
    assert res.cost == value
    assert res.perm == perm


@pytest.mark.parametrize("cost, value, perm", EXAMPLES)
def test_brute_force_examples(cost, value, perm):
    res = brute_force_assignment(cost)
    assert res.cost == value
    assert res.perm == perm


def test_brute_force_trivial_and_ties():
    assert brute_force_assignment([[7]]).perm == (0,)
    assert brute_force_assignment([[7]]).cost == 7
    res = brute_force_assignment(np.full((3, 5), 2.0))
    assert res.perm == (0, 1, 2) and res.cost == 6.0


def test_empty_problem():
    assert hungarian(np.zeros((0, 4))).perm == ()
    assert brute_force_assignment(np.zeros((0, 4))).cost == 0.0


def test_errors():
    with pytest.raises(NonFiniteCostError):
        hungarian([[0.0, np.nan]])
    with pytest.raises(ValueError):
        hungarian([[0.0, np.inf]])
    with pytest.raises(ValueError):
        hungarian(np.zeros((3, 2)))
    with pytest.raises(SizeLimitError):
        brute_force_assignment(np.zeros((9, 9)))


def test_hungarian_matches_brute_force(rng):
    for _ in range(300):
        m = int(rng.integers(1, 7))
        M = int(rng.integers(m, 7))
        c = rng.uniform(size=(m, M))
        h = hungarian(c)
        assert len(set(h.perm)) == m
        assert h.cost == pytest.approx(sum(c[i, j] for i, j in enumerate(h.perm)), abs=1e-12)
        assert abs(h.cost - brute_force_assignment(c).cost) <= 1e-9


def test_integer_costs_match_exactly(rng):
    for _ in range(100):
        m = int(rng.integers(1, 6))
        c = rng.integers(0, 5, size=(m, int(rng.integers(m, 6)))).astype(float)
        assert hungarian(c).cost == brute_force_assignment(c).cost


@given(st.integers(1, 5), st.integers(0, 4), st.floats(-10, 10), st.integers(0, 10_000))
def test_row_shift_changes_cost_by_constant(m, extra, k, seed):
    r = np.random.default_rng(seed)
    c = r.uniform(size=(m, m + extra))
    row = int(r.integers(0, m))
    shifted = c.copy()
    shifted[row] += k
    base, moved = hungarian(c), hungarian(shifted)
    assert moved.cost == pytest.approx(base.cost + k, abs=1e-9)
    # the original optimum stays optimal after the shift
    assert sum(shifted[i, j] for i, j in enumerate(base.perm)) == pytest.approx(moved.cost, abs=1e-9)


def test_lehmer_examples():
    assert lehmer_encode((0, 1, 2)) == 0
    assert lehmer_encode((2, 1, 0)) == 5
    assert lehmer_decode(1, 3) == (0, 2, 1)


@pytest.mark.parametrize("n", range(1, 7))
def test_lehmer_roundtrip_exhaustive(n):
    perms = list(itertools.permutations(range(n)))
    for idx, p in enumerate(perms):  # itertools order is lexicographic
        assert lehmer_encode(p) == idx
        assert lehmer_decode(idx, n) == p
    np.testing.assert_array_equal(all_permutations(n), np.array(perms))


def test_lehmer_errors():
    with pytest.raises(ValueError):
        lehmer_decode(6, 3)
    with pytest.raises(ValueError):
        lehmer_decode(-1, 3)
    with pytest.raises(ValueError):
        lehmer_encode((0, 0, 1))
    with pytest.raises(SizeLimitError):
        lehmer_decode(0, 9)
    with pytest.raises(SizeLimitError):
        all_permutations(9)
    assert len(all_permutations(8)) == math.factorial(8)


def test_hungarian_matches_scipy_on_larger_matrices(rng):
    from scipy.optimize import linear_sum_assignment

    for _ in range(200):
        m = int(rng.integers(1, 30))
        M = m + int(rng.integers(0, 10))
        cost = rng.normal(size=(m, M))
        rows, cols = linear_sum_assignment(cost)
        assert hungarian(cost).cost == pytest.approx(cost[rows, cols].sum(), abs=1e-9)
