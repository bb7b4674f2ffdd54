import math
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphtransfer.graph import SpatialGraph
from graphtransfer.sampling import enumerate_edges, fixed_m_sample, regularized_sample


def pairs(n, sample=0):
    return [(sample, k, k + 1) for k in range(n)]


def path_graph(n=3):
    return SpatialGraph.from_lists(2, [(0.1 + 0.2 * k, 0.5) for k in range(n)],
                                   [(k, k + 1) for k in range(n - 1)])


def test_enumerate_triangle():
    tri = SpatialGraph.from_lists(2, [(0.1, 0.1), (0.9, 0.1), (0.5, 0.9)], [(0, 1), (1, 2), (0, 2)])
    active, background = enumerate_edges([tri])
    assert len(active) == 3 and background == []


def test_enumerate_path():
    active, background = enumerate_edges([path_graph()])
    assert len(active) == 2 and background == [(0, 0, 2)]


def test_enumerate_batch_never_mixes_samples():
    g = path_graph()
    active, background = enumerate_edges([g, g])
    assert len(active) == 4 and len(background) == 2
    # brute-force oracle over within-sample pairs
    expected_bg = sorted((s, i, j) for s in range(2) for i in range(3) for j in range(i + 1, 3)
                         if (i, j) not in g.edges)
    assert sorted(background) == expected_bg
    assert {p[0] for p in active} == {0, 1}


def test_regularized_pads_active():
    s = regularized_sample(pairs(3), pairs(100, 1), r=0.15, rng_seed=0)
    assert len(s.active) == 15 and len(s.background) == 100
    assert s.achieved_ratio == 0.15
    # Eq. 5 oracle: entries 3..14 repeat the shuffled base cyclically
    base = s.active[:3]
    assert s.active[3:] == [base[i % 3] for i in range(3, 15)]


def test_regularized_pads_background():
    s = regularized_sample(pairs(50), pairs(100, 1), r=0.15, rng_seed=0)
    assert len(s.active) == 50 and len(s.background) == 334
    assert s.achieved_ratio == pytest.approx(0.1497, abs=1e-4)
    base = s.background[:100]
    assert s.background[100:] == [base[i % 100] for i in range(100, 334)]


def test_regularized_unchanged_at_ratio():
    a, b = pairs(15), pairs(100, 1)
    s = regularized_sample(a, b, r=0.15)
    assert s.active == a and s.background == b


def test_regularized_parameter_errors_and_empty():
    for r in (0.0, -0.1, 1.01):
        with pytest.raises(ValueError):
            regularized_sample(pairs(1), pairs(1, 1), r=r)
    empty = regularized_sample([], [], r=0.15)
    assert empty.active == [] and empty.background == []


def test_regularized_one_side_empty_is_left_alone():
    s = regularized_sample(pairs(4), [], r=0.5)
    assert len(s.active) == 4 and s.background == []
    s = regularized_sample([], pairs(4), r=0.5)
    assert s.active == [] and len(s.background) == 4


ratios = st.sampled_from([0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.8, 1.0]) | st.floats(0.01, 1.0)


@given(st.integers(1, 300), st.integers(1, 300), ratios, st.integers(0, 2**31))
def test_ratio_attainment_and_one_sided_duplication(na, nb, r, seed):
    s = regularized_sample(pairs(na), pairs(nb, 1), r=r, rng_seed=seed)
    assert abs(len(s.active) / len(s.background) - r) <= 1 / len(s.background) + 1e-12
    dup_a = len(set(s.active)) < len(s.active)
    dup_b = len(set(s.background)) < len(s.background)
    assert not (dup_a and dup_b)
    assert set(s.active) == set(pairs(na)) and set(s.background) == set(pairs(nb, 1))


@given(st.integers(1, 60), st.integers(1, 60), ratios, st.integers(0, 1000), st.randoms())
def test_sizes_independent_of_input_order(na, nb, r, seed, rnd):
    a, b = pairs(na), pairs(nb, 1)
    s1 = regularized_sample(a, b, r=r, rng_seed=seed)
    rnd.shuffle(a)
    rnd.shuffle(b)
    s2 = regularized_sample(a, b, r=r, rng_seed=seed + 1)
    assert (len(s1.active), len(s1.background)) == (len(s2.active), len(s2.background))


def test_regularized_is_deterministic_and_balanced():
    s1 = regularized_sample(pairs(7), pairs(200, 1), r=0.3, rng_seed=5)
    s2 = regularized_sample(pairs(7), pairs(200, 1), r=0.3, rng_seed=5)
    assert s1 == s2
    counts = Counter(s1.active).values()
    assert max(counts) - min(counts) <= 1
    assert len(s1.active) == math.ceil(200 * 0.3)


def test_fixed_m_examples():
    s = fixed_m_sample(pairs(3), pairs(100, 1), m=10, rng_seed=0)
    assert len(s.active) == 3 and len(s.background) == 7
    assert len(set(s.background)) == 7 and set(s.background) <= set(pairs(100, 1))
    s = fixed_m_sample(pairs(3), pairs(2, 1), m=10)
    assert len(s.active) == 3 and len(s.background) == 2
    assert fixed_m_sample(pairs(3), pairs(100, 1), 10, 4) == fixed_m_sample(pairs(3), pairs(100, 1), 10, 4)


def test_fixed_m_rejects_small_budget():
    with pytest.raises(ValueError):
        fixed_m_sample(pairs(5), pairs(5, 1), m=4)


def test_to_json_reports_sizes():
    obj = regularized_sample(pairs(3), pairs(100, 1), r=0.15).to_json()
    assert obj["n_active"] == 15 and obj["n_background"] == 100
    assert obj["achieved_ratio"] == 0.15
