import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphtransfer.graph import Box
from graphtransfer.matcher import (PredictionSet, box_giou, box_iou, cost_matrix,
                                   cost_matrix_arrays, hungarian, match, match_cost)


def brute_force(C):
    """Minimum cost and lexicographically smallest optimal pair list."""
    n, m = C.shape
    best, best_pairs = None, None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            pairs = [(i, c) for i, c in enumerate(cols)]
            cost = sum(C[i, c] for i, c in pairs)
            if best is None or cost < best - 1e-12 or (abs(cost - best) <= 1e-12 and pairs < best_pairs):
                best, best_pairs = cost, pairs
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted((r, c) for c, r in enumerate(rows))
            cost = sum(C[i, c] for i, c in pairs)
            if best is None or cost < best - 1e-12 or (abs(cost - best) <= 1e-12 and pairs < best_pairs):
                best, best_pairs = cost, pairs
    return best, best_pairs


def unit_box(corner, dims=2):
    return Box.from_bounds(corner, tuple(c + 1 for c in corner))


def test_match_cost_examples():
    b = Box((0.5, 0.5), (0.1, 0.1))
    assert match_cost(b, 1.0, b) == 0.0
    assert match_cost(b, 0.0, b, lambda_cls=3.0) == 3.0
    a, c = unit_box((0.0, 0.0)), unit_box((2.0, 2.0))
    assert box_giou(a, c) == pytest.approx(-7 / 9)
    # L1 over centers (2 + 2) and extents (0 + 0)
    assert match_cost(a, 1.0, c, 5.0, 2.0) == pytest.approx(5 * 4 + 2 * (1 + 7 / 9))


def test_match_cost_rejects_mixed_dims():
    with pytest.raises(ValueError):
        match_cost(Box((0.5, 0.5), (0.1, 0.1)), 1.0, Box((0.5, 0.5, 0.5), (0.1, 0.1, 0.1)))


def test_box_iou_basic():
    a = Box.from_bounds((0, 0), (2, 2))
    b = Box.from_bounds((1, 0), (3, 2))
    assert box_iou(a, b) == pytest.approx(2 / 6)
    assert box_iou(a, a) == 1.0


def test_hungarian_examples():
    C = np.ones((3, 3)) - np.eye(3)
    m = hungarian(C)
    assert m.pairs == [(0, 0), (1, 1), (2, 2)] and m.cost == 0.0
    m = hungarian([[5, 1, 3]])
    assert m.pairs == [(0, 1)] and m.unmatched == []


def test_hungarian_rectangular_reports_unmatched():
    m = hungarian([[1.0], [0.0], [2.0]])
    assert m.pairs == [(1, 0)] and m.unmatched == [0, 2]


def test_hungarian_empty_and_invalid():
    assert hungarian(np.zeros((0, 3))).pairs == []
    m = hungarian(np.zeros((2, 0)))
    assert m.pairs == [] and m.unmatched == [0, 1]
    with pytest.raises(ValueError, match="NaN"):
        hungarian([[0.0, np.nan]])
    with pytest.raises(ValueError):
        hungarian([[0.0, np.inf]])


def test_hungarian_ties_resolve_lexicographically():
    m = hungarian(np.zeros((3, 3)))
    assert m.pairs == [(0, 0), (1, 1), (2, 2)]
    # optima cost 1: (0,0),(1,2),(2,1) and (0,1),(1,2),(2,0) among others
    m = hungarian([[1, 1, 0], [1, 1, 0], [0, 0, 5]])
    assert m.pairs == [(0, 0), (1, 2), (2, 1)]


@pytest.mark.parametrize("seed", range(100))
def test_hungarian_matches_permutation_search_6x6(seed):
    C = np.random.default_rng(seed).uniform(0, 10, (6, 6))
    best, pairs = brute_force(C)
    m = hungarian(C)
    assert m.cost == pytest.approx(best, abs=1e-9)
    assert m.pairs == pairs


small_costs = st.tuples(st.integers(1, 5), st.integers(1, 5)).flatmap(
    lambda s: arrays(float, s, elements=st.integers(0, 4).map(float)))


@settings(max_examples=150)
@given(small_costs)
def test_hungarian_exact_with_ties(C):
    best, pairs = brute_force(C)
    m = hungarian(C)
    assert m.cost == best
    assert m.pairs == pairs
    assert len(m.pairs) == min(C.shape)
    assert len({p for p, _ in m.pairs}) == len(m.pairs) == len({g for _, g in m.pairs})


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_hungarian_beats_random_assignments(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(7, 7))
    m = hungarian(C)
    for _ in range(1000):
        perm = rng.permutation(7)
        assert m.cost <= C[np.arange(7), perm].sum() + 1e-12


@settings(max_examples=60)
@given(st.integers(0, 10**6))
def test_row_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    C = rng.uniform(size=(5, 6))
    perm = rng.permutation(5)
    base = dict(hungarian(C).pairs)
    moved = dict(hungarian(C[perm]).pairs)
    assert all(moved[k] == base[perm[k]] for k in range(5))


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.floats(-5, 5))
def test_row_shift_keeps_assignment(seed, shift):
    rng = np.random.default_rng(seed)
    C = rng.uniform(size=(5, 5))
    row = int(rng.integers(5))
    D = C.copy()
    D[row] += shift
    assert hungarian(C).pairs == hungarian(D).pairs


def random_boxes(rng, n, dims=2):
    return [Box(tuple(rng.uniform(0.1, 0.9, dims)), tuple(rng.uniform(0.02, 0.2, dims)))
            for _ in range(n)]


@pytest.mark.parametrize("dims", [2, 3])
def test_vectorized_cost_matches_scalar(dims):
    rng = np.random.default_rng(dims)
    preds = PredictionSet(random_boxes(rng, 6, dims), list(rng.uniform(size=6)))
    gts = random_boxes(rng, 4, dims)
    C = cost_matrix(preds, gts)
    V = cost_matrix_arrays(np.array([b.center for b in preds.boxes]),
                           np.array([b.extent for b in preds.boxes]), np.array(preds.cls_prob),
                           np.array([b.center for b in gts]), np.array([b.extent for b in gts]))
    np.testing.assert_allclose(C, V, rtol=0, atol=1e-12)


def test_match_recovers_shuffled_gt():
    rng = np.random.default_rng(0)
    gts = random_boxes(rng, 5)
    order = [3, 0, 4, 1, 2]
    preds = PredictionSet([gts[k] for k in order], [1.0] * 5)
    m = match(preds, gts)
    assert m.pairs == [(i, order[i]) for i in range(5)] and m.cost == pytest.approx(0.0)


def test_prediction_set_validation_and_json():
    b = Box((0.5, 0.5), (0.1, 0.1))
    with pytest.raises(ValueError):
        PredictionSet([b], [0.5, 0.5])
    with pytest.raises(ValueError):
        PredictionSet([b], [1.5])
    with pytest.raises(ValueError):
        PredictionSet([b, b], [0.5, 0.5], {(0, 1): 2.0})
    p = PredictionSet([b, b], [0.5, 0.25], {(0, 1): 0.75})
    assert p.complete()
    assert PredictionSet.from_json(p.to_json()) == p
    assert not PredictionSet([b, b, b], [0.1] * 3, {(0, 1): 0.5}).complete()
