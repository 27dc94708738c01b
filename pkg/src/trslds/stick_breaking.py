"""State-allocation probabilities via stick breaking.

Tree-structured stick breaking routes probability mass down a binary tree:
each internal node splits its stick with a logistic gate on the previous
continuous state.  Sequential stick breaking (the rSLDS construction) peels
leaves off one at a time.  All products of logistics are accumulated in log
space so extreme gate logits never underflow.
"""

from __future__ import annotations

import numpy as np


def sigmoid(v):
    """Logistic function, branch-stable: never exponentiates a positive value."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out if out.ndim else float(out)


def log_sigmoid(v):
    """log sigma(v) = min(v, 0) - log1p(exp(-|v|))."""
    v = np.asarray(v, dtype=float)
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    return out if out.ndim else float(out)


def node_logit(x, weight, offset):
    """Gate logit of one hyperplane: weight . x + offset."""
    x = np.asarray(x, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if x.shape[-1] != weight.shape[-1]:
        raise ValueError(
            f"dimension mismatch: x has {x.shape[-1]}, hyperplane has {weight.shape[-1]}"
        )
    return x @ weight + offset


def tree_leaf_log_probs(x, R, r, topology):
    """Log leaf-allocation probabilities under tree-structured stick breaking.

    Parameters
    ----------
    x : (..., d_x) array of continuous states.
    R : (n_internal, d_x) hyperplane normals, ordered by ``topology.internal_nodes``.
    r : (n_internal,) hyperplane offsets.
    topology : TreeTopology.

    Returns
    -------
    (..., n_leaves) array of log probabilities.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if topology.n_internal == 0:
        return np.zeros(x.shape[:-1] + (1,))
    nu = x @ np.asarray(R, dtype=float).T + np.asarray(r, dtype=float)
    ls_left = log_sigmoid(nu)
    ls_right = log_sigmoid(-nu)
    signs = topology.routing_signs
    left = (signs > 0).astype(float)
    right = (signs < 0).astype(float)
    return ls_left @ left.T + ls_right @ right.T


def tree_leaf_probs(x, R, r, topology):
    """Leaf-allocation probabilities (exponentiated log-space computation)."""
    return np.exp(tree_leaf_log_probs(x, R, r, topology))


def sequential_leaf_log_probs(nu):
    """Log probabilities of sequential stick breaking for logits ``nu`` (K-1,).

    pi_k = sigma(nu_k) prod_{j<k} sigma(-nu_j) for k < K, and the last leaf
    takes the remaining stick prod_j sigma(-nu_j).
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    ls_take = log_sigmoid(nu)
    ls_pass = log_sigmoid(-nu)
    passed = np.concatenate([[0.0], np.cumsum(ls_pass)])
    return np.concatenate([ls_take + passed[:-1], [passed[-1]]])


def sequential_leaf_probs(nu):
    return np.exp(sequential_leaf_log_probs(nu))


def sample_leaf(x, R, r, topology, rng):
    """Draw a leaf node id from the tree-structured allocation at ``x``."""
    probs = tree_leaf_probs(x, R, r, topology)
    k = int(np.searchsorted(np.cumsum(probs), rng.random()))
    k = min(k, topology.n_leaves - 1)
    return topology.leaves[k]


def sample_leaf_walk(x, R, r, topology, rng):
    """Draw a leaf by flipping left/right coins down the tree.

    Induces the same distribution as :func:`sample_leaf`.
    """
    n = 0
    while not topology.is_leaf(n):
        i = topology.internal_index[n]
        p_left = sigmoid(node_logit(x, R[i], r[i]))
        left, right = topology.children[n]
        n = left if rng.random() < p_left else right
    return n
