import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from angloc.assignment import AssignmentError, brute_force_maximize, linear_sum_assignment_min, maximize


@st.composite
def score_matrices(draw, max_rows=5, max_cols=7, elements=st.floats(0, 1)):
    m = draw(st.integers(1, max_cols))
    n = draw(st.integers(1, min(m, max_rows)))
    return draw(arrays(np.float64, (n, m), elements=elements))


@given(score_matrices())
def test_matches_exhaustive_search(C):
    a = maximize(C)
    b = brute_force_maximize(C)
    assert a.score == pytest.approx(b.score, abs=1e-12)
    assert len(set(a.columns)) == len(a.columns)


@given(score_matrices(elements=st.integers(0, 2).map(float)))
def test_ties_resolve_lexicographically(C):
    # integer scores produce many ties; the smallest optimal column sequence must win
    a = maximize(C)
    n, m = C.shape
    best = max(C[np.arange(n), p].sum() for p in itertools.permutations(range(m), n))
    first = next(p for p in itertools.permutations(range(m), n) if C[np.arange(n), p].sum() == best)
    assert a.columns == tuple(first)


@given(score_matrices(), st.floats(-3, 3), st.floats(0.1, 5))
def test_invariant_under_affine_scores(C, shift, scale):
    a = maximize(C)
    b = maximize(C * scale + shift)
    assert a.score * scale + shift * C.shape[0] == pytest.approx(b.score, rel=1e-9, abs=1e-9)


@given(score_matrices(), st.randoms(use_true_random=False))
def test_row_permutation_equivariant(C, r):
    perm = list(range(C.shape[0]))
    r.shuffle(perm)
    assert maximize(C[perm]).score == pytest.approx(maximize(C).score, abs=1e-12)


def test_min_solver_potentials(rng):
    for _ in range(50):
        C = rng.uniform(size=(4, 6))
        cols = linear_sum_assignment_min(C)
        best = min(C[np.arange(4), p].sum() for p in itertools.permutations(range(6), 4))
        assert C[np.arange(4), cols].sum() == pytest.approx(best)


def test_identity_and_mapping():
    C = np.eye(3) + 0.1
    a = maximize(C)
    assert a.columns == (0, 1, 2)
    assert a.mapping([7, 8, 9]) == {0: 7, 1: 8, 2: 9}


def test_errors():
    with pytest.raises(AssignmentError):
        maximize(np.zeros((3, 2)))
    with pytest.raises(AssignmentError):
        maximize(np.array([[np.nan, 1.0]]))
    assert maximize(np.zeros((0, 3))).columns == ()
