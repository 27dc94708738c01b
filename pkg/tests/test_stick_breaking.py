import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import chi2_contingency

from trslds.stick_breaking import (
    log_sigmoid,
    node_logit,
    sample_leaf,
    sample_leaf_walk,
    sequential_leaf_probs,
    sigmoid,
    tree_leaf_log_probs,
    tree_leaf_probs,
)
from trslds.tree import build_comb, build_tree


def test_node_logit_values():
    assert node_logit(np.zeros(3), np.ones(3), 0.7) == pytest.approx(0.7)
    assert node_logit(np.array([1.0, 1.0]), np.array([2.0, -1.0]), 0.0) == pytest.approx(1.0)
    assert node_logit(np.array([3.0, -3.0]), np.array([1.0, 1.0]), 5.0) == pytest.approx(5.0)


def test_node_logit_dimension_mismatch():
    with pytest.raises(ValueError):
        node_logit(np.zeros(3), np.ones(2), 0.0)


def test_tree_probs_uniform_at_zero_logits():
    t = build_tree(4)
    p = tree_leaf_probs(np.zeros(2), np.zeros((3, 2)), np.zeros(3), t)
    np.testing.assert_allclose(p, 0.25)


def test_tree_probs_single_leaf():
    t = build_tree(1)
    p = tree_leaf_probs(np.zeros(2), np.zeros((0, 2)), np.zeros(0), t)
    np.testing.assert_allclose(p, [1.0])


def test_tree_probs_two_leaves_matches_logistic():
    t = build_tree(2)
    # nu = 2 at the root: left leaf gets sigma(2)
    p = tree_leaf_probs(np.array([1.0]), np.array([[2.0]]), np.array([0.0]), t)
    np.testing.assert_allclose(p, [expit(2.0), 1 - expit(2.0)], atol=1e-12)
    np.testing.assert_allclose(p, [0.880797, 0.119203], atol=1e-6)


def test_sequential_probs_repeated_halving():
    np.testing.assert_allclose(sequential_leaf_probs(np.zeros(2)),
                               [0.5, 0.25, 0.25], atol=1e-12)


def test_sequential_probs_extreme():
    p = sequential_leaf_probs(np.array([10.0, 10.0, 10.0]))
    s = expit(10.0)
    np.testing.assert_allclose(p[0], s, rtol=1e-12)
    np.testing.assert_allclose(p[1], s * (1 - s), rtol=1e-12)


def test_sequential_equals_tree_for_two_leaves():
    t = build_tree(2)
    for v in (-3.0, 0.0, 1.7):
        p_tree = tree_leaf_probs(np.array([1.0]), np.array([[v]]), np.array([0.0]), t)
        p_seq = sequential_leaf_probs(np.array([v]))
        np.testing.assert_allclose(p_tree, p_seq, atol=1e-15)


def test_comb_topology_reproduces_sequential():
    # tree-structured sticks on a right-leaning comb == sequential sticks
    rng = np.random.default_rng(3)
    for K in (2, 3, 5):
        t = build_comb(K)
        nu = rng.normal(size=K - 1)
        # internal node at depth j carries nu_j; x = [1], R = nu, r = 0
        R = nu[:, None]
        p_tree = tree_leaf_probs(np.array([1.0]), R, np.zeros(K - 1), t)
        p_seq = sequential_leaf_probs(nu)
        np.testing.assert_allclose(p_tree, p_seq, atol=1e-14)


@pytest.mark.parametrize("K", [1, 2, 4, 8, 5])
def test_normalization_random(K):
    rng = np.random.default_rng(42)
    t = build_tree(K)
    d = 3
    for _ in range(50):
        x = rng.normal(size=d) * 5
        R = rng.normal(size=(t.n_internal, d)) * 3
        r = rng.normal(size=t.n_internal) * 3
        p = tree_leaf_probs(x, R, r, t)
        assert abs(p.sum() - 1.0) < 1e-12
        assert (p >= 0).all() and (p <= 1).all()


def test_monotonicity_in_root_logit():
    t = build_tree(4)
    d = 2
    rng = np.random.default_rng(0)
    R = rng.normal(size=(3, d))
    r = rng.normal(size=3)
    x = rng.normal(size=d)
    left_leaves = [k for k, leaf in enumerate(t.leaves)
                   if t.routing_signs[k, t.internal_index[0]] > 0]
    masses = []
    for bump in (0.0, 0.5, 1.0, 2.0):
        r2 = r.copy()
        r2[t.internal_index[0]] += bump
        p = tree_leaf_probs(x, R, r2, t)
        masses.append(p[left_leaves].sum())
    assert all(m2 > m1 for m1, m2 in zip(masses, masses[1:]))


def test_no_nan_at_extreme_logits():
    t = build_tree(4)
    for v in (-700.0, 700.0):
        lp = tree_leaf_log_probs(np.array([1.0]), np.full((3, 1), v), np.zeros(3), t)
        assert np.isfinite(np.exp(lp)).all()
        assert not np.isnan(lp).any()
    assert np.isfinite(log_sigmoid(-700.0))
    assert sigmoid(700.0) == 1.0


def test_batched_evaluation_matches_loop():
    t = build_tree(4)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(10, 2))
    R = rng.normal(size=(3, 2))
    r = rng.normal(size=3)
    batch = tree_leaf_probs(X, R, r, t)
    for i in range(10):
        np.testing.assert_allclose(batch[i], tree_leaf_probs(X[i], R, r, t))


def test_sample_leaf_deterministic_routing():
    t = build_tree(4)
    # huge logits force left at every node -> leftmost leaf
    R = np.zeros((3, 2))
    r = np.full(3, 500.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert sample_leaf(np.zeros(2), R, r, t, rng) == t.leaves[0]
        assert sample_leaf_walk(np.zeros(2), R, r, t, rng) == t.leaves[0]


def test_sample_leaf_frequencies():
    t = build_tree(4)
    rng = np.random.default_rng(7)
    n = 100_000
    draws = np.array([t.leaf_index[sample_leaf(np.zeros(2), np.zeros((3, 2)),
                                               np.zeros(3), t, rng)]
                      for _ in range(n)])
    freq = np.bincount(draws, minlength=4) / n
    # 3 sigma of a fair 4-sided draw
    assert np.abs(freq - 0.25).max() < 3 * np.sqrt(0.25 * 0.75 / n)


def test_walk_and_categorical_agree():
    # chi-square two-sample test between both samplers
    t = build_tree(4)
    rng = np.random.default_rng(11)
    R = rng.normal(size=(3, 2))
    r = rng.normal(size=3)
    x = rng.normal(size=2)
    n = 20_000
    a = np.array([t.leaf_index[sample_leaf(x, R, r, t, rng)] for _ in range(n)])
    b = np.array([t.leaf_index[sample_leaf_walk(x, R, r, t, rng)] for _ in range(n)])
    table = np.stack([np.bincount(a, minlength=4), np.bincount(b, minlength=4)])
    _, pval, _, _ = chi2_contingency(table)
    assert pval > 0.01
