import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moesim.assignment import Permutation, max_weight_assignment, support_perfect_matching

from conftest import brute_force_assignment, brute_force_has_matching


def int_matrix(n_max=7, hi=20):
    return st.integers(1, n_max).flatmap(lambda n: arrays(np.int64, (n, n), elements=st.integers(0, hi)))


def test_two_by_two():
    perm, w = max_weight_assignment([[1, 2], [3, 5]])
    assert perm.dest_of == (0, 1)
    assert w == 6


@pytest.mark.parametrize("n", [1, 3, 8])
def test_diagonal_dominant(n):
    w = 10 * np.eye(n)
    perm, total = max_weight_assignment(w)
    assert perm == Permutation.identity(n)
    assert total == 10 * n


def test_seeded_five_by_five():
    w = np.random.default_rng(2024).integers(0, 50, (5, 5))
    perm, total = max_weight_assignment(w)
    # exhaustive enumeration over 120 permutations
    assert total == 194
    assert perm.dest_of == (0, 3, 2, 1, 4)


def test_lexicographic_tie_break():
    for n in range(1, 5):
        for cells in itertools.product([0, 1], repeat=n * n):
            w = np.array(cells).reshape(n, n)
            ref, best = brute_force_assignment(w)
            perm, total = max_weight_assignment(w)
            assert total == best
            assert perm.dest_of == ref


def test_empty_matrix():
    perm, total = max_weight_assignment(np.zeros((0, 0)))
    assert perm.n == 0 and total == 0.0


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.array([[1.0, np.inf], [0, 0]]), np.array([[np.nan]])])
def test_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        max_weight_assignment(bad)


def test_permutation_validates():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1))


@settings(max_examples=200, deadline=None)
@given(int_matrix())
def test_optimal_against_enumeration(w):
    perm, total = max_weight_assignment(w)
    assert sorted(perm.dest_of) == list(range(w.shape[0]))
    assert total == brute_force_assignment(w)[1]
    assert total == sum(w[s, d] for s, d in perm)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-1e3, 1e3))))
def test_real_weights_optimal(w):
    _, total = max_weight_assignment(w)
    assert total == pytest.approx(brute_force_assignment(w)[1], rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(int_matrix(6), st.data())
def test_row_shift(w, data):
    n = w.shape[0]
    row = data.draw(st.integers(0, n - 1))
    c = data.draw(st.integers(-50, 50))
    perm, total = max_weight_assignment(w)
    shifted = w.copy()
    shifted[row] += c
    _, shifted_total = max_weight_assignment(shifted)
    assert shifted_total == total + c
    # the original argmax stays optimal under the shifted weights
    assert sum(shifted[s, d] for s, d in perm) == brute_force_assignment(shifted)[1]


@settings(max_examples=100, deadline=None)
@given(int_matrix(6))
def test_transpose_gives_inverse(w):
    perm, total = max_weight_assignment(w)
    tperm, ttotal = max_weight_assignment(w.T)
    assert ttotal == total
    # on unique optima the transposed solve is the exact inverse
    if sum(1 for p in itertools.permutations(range(w.shape[0]))
           if sum(w[i, p[i]] for i in range(w.shape[0])) == total) == 1:
        assert tperm == perm.inverse()


def test_deterministic():
    w = np.random.default_rng(7).integers(0, 3, (8, 8))
    assert len({max_weight_assignment(w)[0] for _ in range(5)}) == 1


class TestSupportMatching:
    def test_identity(self):
        assert support_perfect_matching(np.eye(4, dtype=bool)) == Permutation.identity(4)

    def test_hall_violation(self):
        mask = np.ones((3, 3), dtype=bool)
        mask[1] = False
        assert support_perfect_matching(mask) is None

    def test_shape(self):
        with pytest.raises(ValueError):
            support_perfect_matching(np.ones((2, 3), dtype=bool))

    @settings(max_examples=150, deadline=None)
    @given(arrays(np.bool_, (6, 6), elements=st.booleans()))
    def test_agrees_with_kuhn(self, mask):
        perm = support_perfect_matching(mask)
        assert (perm is not None) == brute_force_has_matching(mask)
        if perm is not None:
            assert all(mask[s, d] for s, d in perm)
