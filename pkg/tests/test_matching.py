import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osdr import autodiff as ad
from osdr.errors import ConfigurationError, DimensionError, UsageError
from osdr.matching import (MatchedPair, SmoConfig, benchmark_matchers, discrepancy_loss,
                           filter_pairs, match_greedy, match_hungarian, pairwise_distances,
                           read_pairs_csv, write_pairs_csv)

from oracles import greedy_oracle, hungarian_oracle


def test_greedy_simple():
    pairs = match_greedy([[1.0, 0.0], [3.0, 0.0]], [[0.0, 0.0]])
    assert pairs == [MatchedPair(0, 0, 1.0)]


def test_greedy_identity():
    x = np.random.default_rng(0).normal(size=(20, 5))
    pairs = match_greedy(x, x)
    assert [p.source for p in pairs] == list(range(20))
    assert all(p.feat_dist == 0.0 for p in pairs)


def test_greedy_matches_oracle_50x50():
    rng = np.random.default_rng(1)
    s, t = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    idx, dist = greedy_oracle(s, t)
    pairs = match_greedy(s, t)
    assert [p.source for p in pairs] == idx.tolist()
    assert [p.feat_dist for p in pairs] == dist.tolist()


def test_greedy_ties_lowest_index():
    pairs = match_greedy([[1.0], [-1.0], [1.0]], [[0.0]])
    assert pairs[0].source == 0


def test_greedy_errors():
    with pytest.raises(UsageError):
        match_greedy(np.empty((0, 2)), [[0.0, 0.0]])
    with pytest.raises(DimensionError):
        match_greedy([[0.0, 0.0]], [[0.0, 0.0, 0.0]])


def _pairs(n):
    return [MatchedPair(i, i, 0.0) for i in range(n)]


def test_filter_examples():
    sr = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    tr = np.array([[0.9, 0.0], [0.6, 0.0], [0.4, 0.0]])  # distances 0.1, 0.4, 0.6
    assert [p.passed for p in filter_pairs(_pairs(3), sr, tr, 1e9)] == [True] * 3
    assert [p.passed for p in filter_pairs(_pairs(3), sr, tr, 0.0)] == [False] * 3
    flags = filter_pairs(_pairs(3), sr, tr, 0.5)
    assert [p.passed for p in flags] == [True, True, False]
    np.testing.assert_allclose([p.resp_dist for p in flags], [0.1, 0.4, 0.6], atol=1e-15)
    with pytest.raises(DimensionError):
        filter_pairs(_pairs(1), np.ones((1, 2)), np.ones((1, 3)), 0.5)


def test_filter_identical_responses_fail_at_zero():
    r = np.full((2, 3), 1 / 3)
    assert not any(p.passed for p in filter_pairs(_pairs(2), r, r, 0.0))


def test_discrepancy_examples():
    fs = np.array([[0.0, 0.0], [0.0, 0.0]])
    ft = np.array([[1.0, 0.0], [0.0, 2.0]])
    none = [MatchedPair(i, i, 0.0, 0.0, False) for i in range(2)]
    assert discrepancy_loss(none, fs, ft) == 0.0
    same = [MatchedPair(0, 0, 0.0, 0.0, True)]
    assert discrepancy_loss(same, fs, fs) == 0.0
    both = [MatchedPair(i, i, 0.0, 0.0, True) for i in range(2)]
    assert discrepancy_loss(both, fs, ft, "sum") == 3.0
    assert discrepancy_loss(both, fs, ft, "mean") == 1.5
    with pytest.raises(ConfigurationError):
        discrepancy_loss(both, fs, ft, "max")


def test_discrepancy_gradient_zero_for_failing_pairs():
    rng = np.random.default_rng(2)
    tape = ad.GradientTape()
    fs = tape.watch(rng.normal(size=(3, 4)))
    ft = tape.watch(rng.normal(size=(3, 4)))
    pairs = [MatchedPair(0, 0, 0, 0, True), MatchedPair(1, 1, 0, 0, False),
             MatchedPair(2, 2, 0, 0, True)]
    grads = ad.backward(tape, discrepancy_loss(pairs, fs, ft))
    assert not grads[fs][1].any() and not grads[ft][1].any()
    assert grads[fs][0].any()

    def loss(a, b):
        return discrepancy_loss(pairs, a, b)

    assert ad.check_gradients(loss, [fs.value, ft.value]) < 1e-4


def test_hungarian_examples():
    col, total = match_hungarian(1.0 - np.eye(4))
    assert col.tolist() == [0, 1, 2, 3] and total == 0.0
    c = np.array([[4.0, 1, 3], [2, 0, 5], [3, 2, 2]])
    assert match_hungarian(c)[1] == 5.0
    assert hungarian_oracle(c.tolist())[1] == 5.0
    col2, total2 = match_hungarian(c + np.array([[7.0], [7.0], [7.0]]))
    assert total2 == 5.0 + 3 * 7.0
    assert col2.tolist() == match_hungarian(c)[0].tolist()


def test_hungarian_errors():
    with pytest.raises(UsageError):
        match_hungarian(np.ones((2, 3)))
    with pytest.raises(UsageError):
        match_hungarian(np.array([[np.inf, 0], [0, 0]]))


@pytest.mark.parametrize("n", range(1, 8))
def test_hungarian_matches_exhaustive(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        c = rng.integers(0, 20, size=(n, n)).astype(float)
        _, total = match_hungarian(c)
        assert total == hungarian_oracle(c.tolist())[1]


def test_pairs_csv_round_trip(tmp_path):
    pairs = [MatchedPair(0, 3, 0.125, 0.5, True), MatchedPair(1, 2, 1 / 3, 0.75, False)]
    write_pairs_csv(pairs, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == \
        "target_idx,source_idx,feat_dist,resp_dist,pass"
    assert read_pairs_csv(tmp_path / "p.csv") == pairs


def test_smo_config_threshold():
    assert SmoConfig(tau=0.3).threshold([1.0, 2.0]) == 0.3
    assert SmoConfig().threshold([1.0, 2.0, 3.0]) == 2.0
    with pytest.raises(ConfigurationError):
        SmoConfig(tau_quantile=0.0)
    with pytest.raises(ConfigurationError):
        SmoConfig(rematch_period=0)


def test_benchmark_small():
    r = benchmark_matchers(10, 10, 4, seed=0)
    assert 0.0 <= r.greedy_acc <= 1.0 and 0.0 <= r.hungarian_acc <= 1.0
    assert r.greedy_ms >= 0 and r.hungarian_ms >= 0
    assert '"greedy_ms"' in r.to_json()


def test_benchmark_rectangular():
    r = benchmark_matchers(12, 7, 3, seed=1)
    assert 0.0 <= r.hungarian_acc <= 1.0


def test_identical_domains_greedy_perfect():
    x = np.random.default_rng(3).normal(size=(30, 4))
    assert [p.source for p in match_greedy(x, x)] == list(range(30))


def test_pairwise_distances():
    rng = np.random.default_rng(4)
    s, t = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    ref = np.array([[math.dist(a, b) for b in s] for a in t])
    np.testing.assert_allclose(pairwise_distances(s, t), ref, rtol=0, atol=1e-12)


mats = st.tuples(st.integers(1, 12), st.integers(1, 12), st.integers(1, 5),
                 st.integers(0, 2**31 - 1))


@settings(max_examples=60, deadline=None)
@given(mats, st.randoms(use_true_random=False))
def test_greedy_permutation_invariant(shape, rnd):
    ns, nt, d, seed = shape
    rng = np.random.default_rng(seed)
    s, t = rng.normal(size=(ns, d)), rng.normal(size=(nt, d))
    perm = list(range(nt))
    rnd.shuffle(perm)
    base = match_greedy(s, t)
    permuted = match_greedy(s, t[perm])
    for j, p in enumerate(perm):
        assert permuted[j].source == base[p].source
        assert permuted[j].feat_dist == base[p].feat_dist


@settings(max_examples=60, deadline=None)
@given(mats)
def test_greedy_ignores_farther_appended_source(shape):
    ns, nt, d, seed = shape
    rng = np.random.default_rng(seed)
    s, t = rng.normal(size=(ns, d)), rng.normal(size=(nt, d))
    far = np.full((1, d), 1e6)
    assert match_greedy(np.vstack([s, far]), t) == match_greedy(s, t)


@settings(max_examples=60, deadline=None)
@given(mats, st.floats(0, 2), st.floats(0, 2))
def test_filter_monotone(shape, a, b):
    ns, nt, d, seed = shape
    rng = np.random.default_rng(seed)
    sr, tr = rng.dirichlet(np.ones(d), size=ns), rng.dirichlet(np.ones(d), size=nt)
    pairs = match_greedy(rng.normal(size=(ns, 2)), rng.normal(size=(nt, 2)))
    lo, hi = min(a, b), max(a, b)
    p_lo = {p.target for p in filter_pairs(pairs, sr, tr, lo) if p.passed}
    p_hi = {p.target for p in filter_pairs(pairs, sr, tr, hi) if p.passed}
    assert p_lo <= p_hi


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_hungarian_bounds(n, d, seed):
    """Row minima <= optimal assignment <= any one-to-one greedy assignment."""
    rng = np.random.default_rng(seed)
    cost = pairwise_distances(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
    _, total = match_hungarian(cost)
    assert cost.min(axis=1).sum() <= total + 1e-9
    used, greedy_total = set(), 0.0
    for row in cost:
        j = min((c for c in range(n) if c not in used), key=lambda c: row[c])
        used.add(j)
        greedy_total += row[j]
    assert total <= greedy_total + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_discrepancy_zero_on_identical_domains(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    pairs = [MatchedPair(p.target, p.source, p.feat_dist, 0.0, True) for p in match_greedy(x, x)]
    assert discrepancy_loss(pairs, x, x) == 0.0
