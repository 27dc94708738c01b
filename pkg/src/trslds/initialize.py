"""Starting point for the Gibbs chain.

Probabilistic PCA initializes the emissions and continuous states; the tree
of dynamics and gates is fit greedily level by level on the one-step MSE of
the latent trajectories (root by ordinary least squares, deeper levels by
gradient descent with momentum on the soft-gated objective); discrete
states come from hard classification under the fitted gates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import IllPosedError
from .model import EmissionParams, LatentState, ModelParams
from .stick_breaking import sigmoid, tree_leaf_probs
from .tree import TreeTopology


@dataclass
class InitConfig:
    step_size: float = 1e-3
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int | None = None  # None = full batch
    ppca_noise_floor: float = 1e-6
    smoothing_bins: float = 5.0  # Gaussian kernel width for Bernoulli data
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def ppca(Y_rows, d_x, noise_floor=1e-6):
    """Maximum-likelihood probabilistic PCA.

    Returns (C, mean, noise_var) with C the (d_y, d_x) loading such that
    y ~ N(C x + mean, noise_var I), x ~ N(0, I).
    """
    Y_rows = np.asarray(Y_rows, dtype=float)
    n, d_y = Y_rows.shape
    if d_x > d_y:
        raise ValueError("d_x must not exceed d_y")
    if n < 2:
        raise IllPosedError("need at least two observations for PPCA")
    mean = Y_rows.mean(axis=0)
    cov = np.cov((Y_rows - mean).T, bias=True).reshape(d_y, d_y)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if evals[0] <= 1e-300:
        raise IllPosedError("degenerate data covariance")
    if d_x < d_y:
        noise = max(float(evals[d_x:].mean()), noise_floor)
    else:
        noise = noise_floor
    gain = np.sqrt(np.maximum(evals[:d_x] - noise, noise_floor))
    C = evecs[:, :d_x] * gain
    return C, mean, noise


def ppca_latents(Y, C, mean, noise):
    """Posterior-mean latent coordinates E[x | y] under the PPCA model."""
    d_x = C.shape[1]
    M = C.T @ C + noise * np.eye(d_x)
    return np.linalg.solve(M, C.T @ (np.asarray(Y) - mean).T).T


def ppca_init(ys, d_x, noise_floor=1e-6):
    """PPCA on stacked trials: returns (C, d, x-per-trial, noise_var)."""
    stacked = np.concatenate(ys, axis=0)
    C, mean, noise = ppca(stacked, d_x, noise_floor)
    xs = [ppca_latents(y, C, mean, noise) for y in ys]
    return C, mean, xs, noise


def smooth_binary(y, width):
    """Gaussian-kernel smoothing along time, clipped away from {0, 1}."""
    sm = gaussian_filter1d(np.asarray(y, dtype=float), sigma=width, axis=0,
                           mode="nearest")
    return np.clip(sm, 1e-3, 1 - 1e-3)


def _gate_products(topology, xs_prev, R, r, depth):
    """Soft path probability of every frontier node at ``depth`` for each
    time step, using gates of internal nodes shallower than ``depth``."""
    front = topology.frontier(depth)
    weights = {}
    for node in front:
        w = np.ones(xs_prev.shape[0])
        n = node
        while n != 0:
            par = topology.parent[n]
            i = topology.internal_index[par]
            nu = xs_prev @ R[i] + r[i]
            gate = sigmoid(nu)
            w = w * (gate if topology.children[par][0] == n else 1.0 - gate)
            n = par
        weights[node] = w
    return front, weights


def greedy_tree_fit(xs, topology, config=None):
    """Level-wise greedy fit of per-node dynamics and gating hyperplanes.

    Returns (A, b, R, r, level_losses) where A/b hold the cumulative
    (path-summed) dynamics of every node and level_losses records the final
    one-step MSE of each fitted level.
    """
    config = config or InitConfig()
    rng = np.random.default_rng(config.seed)
    d = xs[0].shape[1]
    X = np.concatenate([x[:-1] for x in xs], axis=0)
    dX = np.concatenate([np.diff(x, axis=0) for x in xs], axis=0)
    n = X.shape[0]
    if n < d + 1:
        raise IllPosedError("need at least d_x + 1 transition pairs")

    A = np.zeros((topology.n_nodes, d, d))
    b = np.zeros((topology.n_nodes, d))
    R = np.zeros((topology.n_internal, d))
    r = np.zeros(topology.n_internal)

    # root: closed-form least squares on the one-step differences
    Xt = np.concatenate([X, np.ones((n, 1))], axis=1)
    W, *_ = np.linalg.lstsq(Xt, dX, rcond=None)
    A[0], b[0] = W[:d].T, W[d]
    losses = [float(((dX - Xt @ W) ** 2).sum(axis=1).mean())]

    for depth in range(1, topology.max_depth + 1):
        new_nodes = [m for m in topology.nodes_at_depth(depth)]
        gate_nodes = [m for m in topology.internal_nodes
                      if topology.depth[m] == depth - 1]
        if not new_nodes:
            break
        # residual dynamics of the new level start at zero; gates start at
        # small random values to break the left/right symmetry
        res_A = {m: 1e-2 * rng.standard_normal((d, d)) for m in new_nodes}
        res_b = {m: 1e-2 * rng.standard_normal(d) for m in new_nodes}
        for m in gate_nodes:
            i = topology.internal_index[m]
            R[i] = 0.1 * rng.standard_normal(d)
            r[i] = 0.1 * rng.standard_normal()

        vel = {k: 0.0 for k in
               [("A", m) for m in new_nodes] + [("b", m) for m in new_nodes]
               + [("R", m) for m in gate_nodes] + [("r", m) for m in gate_nodes]}

        idx_all = np.arange(n)
        for epoch in range(config.epochs):
            if config.batch_size is None:
                idx = idx_all
            else:
                idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
            Xb, dXb = X[idx], dX[idx]
            m_count = Xb.shape[0]
            front, weights = _gate_products(topology, Xb, R, r, depth)
            preds = {}
            for node in front:
                if node in res_A:
                    A_node = A[topology.parent[node]] + res_A[node]
                    b_node = b[topology.parent[node]] + res_b[node]
                else:  # shallow leaf, fully frozen
                    A_node, b_node = A[node], b[node]
                preds[node] = Xb @ A_node.T + b_node
            err = dXb - sum(weights[nd][:, None] * preds[nd] for nd in front)

            for node in new_nodes:
                g_A = -2.0 / m_count * (weights[node][:, None] * err).T @ Xb
                g_b = -2.0 / m_count * (weights[node][:, None] * err).sum(axis=0)
                vel[("A", node)] = (config.momentum * vel[("A", node)]
                                    - config.step_size * g_A)
                vel[("b", node)] = (config.momentum * vel[("b", node)]
                                    - config.step_size * g_b)
                res_A[node] = res_A[node] + vel[("A", node)]
                res_b[node] = res_b[node] + vel[("b", node)]
            for mnode in gate_nodes:
                i = topology.internal_index[mnode]
                left, right = topology.children[mnode]
                nu = Xb @ R[i] + r[i]
                gate = sigmoid(nu)
                # ancestor weight of the gate node itself
                w_next = weights[left] + weights[right]
                dgate = w_next * gate * (1.0 - gate)
                diff = preds[left] - preds[right]
                d_nu = -2.0 / m_count * (err * diff).sum(axis=1) * dgate
                g_R = d_nu @ Xb
                g_r = d_nu.sum()
                vel[("R", mnode)] = (config.momentum * vel[("R", mnode)]
                                     - config.step_size * g_R)
                vel[("r", mnode)] = (config.momentum * vel[("r", mnode)]
                                     - config.step_size * g_r)
                R[i] = R[i] + vel[("R", mnode)]
                r[i] = r[i] + vel[("r", mnode)]

        for node in new_nodes:
            A[node] = A[topology.parent[node]] + res_A[node]
            b[node] = b[topology.parent[node]] + res_b[node]
        front, weights = _gate_products(topology, X, R, r, depth)
        preds = {nd: X @ A[nd].T + b[nd] for nd in front}
        err = dX - sum(weights[nd][:, None] * preds[nd] for nd in front)
        losses.append(float((err ** 2).sum(axis=1).mean()))

    return A, b, R, r, losses


def hard_assign(xs, R, r, topology):
    """z_t = argmax_k leaf probability at x_{t-1}; ties go to the lowest
    leaf index (argmax returns the first maximum)."""
    out = []
    for x in xs:
        probs = tree_leaf_probs(x[:-1], R, r, topology)
        out.append(np.argmax(probs, axis=1).astype(int))
    return out


def initialize(trials, params_template, config=None):
    """Full pipeline: PPCA -> greedy tree fit -> hard assignment.

    ``params_template`` supplies the topology, priors, and emission kind;
    returns (ModelParams, list[LatentState]) ready for the first sweep.
    """
    config = config or InitConfig()
    p = params_template.copy()
    topo = p.topology
    d_x = p.d_x
    kind = p.emission.kind

    if kind == "bernoulli":
        ys = [smooth_binary(tr.y, config.smoothing_bins) for tr in trials]
        ys = [np.log(y) - np.log1p(-y) for y in ys]  # logit scale
    else:
        ys = [tr.y for tr in trials]
    C, d_off, xs_obs, noise = ppca_init(ys, d_x, config.ppca_noise_floor)

    # x has T+1 entries; duplicate the first latent as the pre-observation state
    xs = [np.concatenate([x[:1], x], axis=0) for x in xs_obs]

    A, b, R, r, losses = greedy_tree_fit(xs, topo, config)
    zs = hard_assign(xs, R, r, topo)

    p.A, p.b, p.R, p.r = A, b, R, r
    if kind == "gaussian":
        p.emission = EmissionParams("gaussian", C, d_off,
                                    max(noise, 1e-6) * np.eye(p.d_y))
    else:
        p.emission = EmissionParams("bernoulli", C, d_off)

    # per-leaf residual covariance under the hard assignment
    X = np.concatenate([x[:-1] for x in xs], axis=0)
    dX = np.concatenate([np.diff(x, axis=0) for x in xs], axis=0)
    Z = np.concatenate(zs)
    leaves = list(topo.leaves)
    for k in range(topo.n_leaves):
        sel = Z == k
        resid = dX - X @ A[leaves[k]].T - b[leaves[k]]
        if sel.sum() >= d_x + 2:
            resid = resid[sel]
        cov = resid.T @ resid / max(resid.shape[0], 1)
        p.Q[k] = cov + 1e-4 * np.eye(d_x)

    states = [LatentState(x=x, z=z) for x, z in zip(xs, zs)]
    return p, states, losses
