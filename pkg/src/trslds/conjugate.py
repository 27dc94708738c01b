"""Closed-form conditional posterior draws for the Gibbs sweep.

Covers leaf dynamics and noise, internal-node dynamics, Gaussian (MNIW) and
Bernoulli (PG-augmented) emissions, gating hyperplanes, and the Polya-Gamma
auxiliaries.  Every Gaussian block exposes its posterior information
parameters separately from the draw so independent oracles can check the
density, not just samples.

Sufficient statistics across trials are always accumulated in trial-id
order, which keeps chains bit-identical under permutations of the dataset.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.stats import invwishart

from .model import vec_ab, unvec_ab
from .polya_gamma import sample_pg
from .util import chol_psd, mvn_info_draw, symmetrize


def _prec(cov):
    L = chol_psd(cov, "prior covariance")
    return linalg.cho_solve((L, True), np.eye(cov.shape[0]))


def regression_pairs(states, leaf_pos=None):
    """Stack (x_{t-1}, dx_t) pairs across trials, optionally restricted to
    steps assigned to one leaf."""
    xs, dxs = [], []
    for st in states:
        sel = slice(None) if leaf_pos is None else (st.z == leaf_pos)
        xs.append(st.x[:-1][sel])
        dxs.append((st.x[1:] - st.x[:-1])[sel])
    X = np.concatenate(xs, axis=0) if xs else np.zeros((0, 0))
    dX = np.concatenate(dxs, axis=0) if dxs else np.zeros((0, 0))
    return X, dX


def _with_intercept(X):
    return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)


# --- generic Gaussian blocks --------------------------------------------------

def matrix_regression_info(prior_mean_vec, prior_cov, Xt, Y, noise_prec):
    """Information parameters of vec(W) (row-major, W maps Xt rows to Y rows)
    under a Gaussian prior and N(Y_t | W x_t, noise) likelihood."""
    P0 = _prec(prior_cov)
    J = P0 + np.kron(noise_prec, Xt.T @ Xt)
    h = P0 @ prior_mean_vec + (noise_prec @ (Y.T @ Xt)).reshape(-1)
    return symmetrize(J), h


def weighted_regression_info(prior_mean, prior_cov, Xt, kappa, weights):
    """Information parameters of a weight vector under pseudo-observations
    kappa_t / w_t with precision w_t at regressors Xt (PG-augmented form)."""
    P0 = _prec(prior_cov)
    J = P0 + Xt.T @ (weights[:, None] * Xt)
    h = P0 @ prior_mean + Xt.T @ kappa
    return symmetrize(J), h


# --- leaf dynamics and noise ---------------------------------------------------

def leaf_dynamics_info(params, states, leaf_pos):
    """Posterior information of vec([A_k, b_k]) for one leaf."""
    topo = params.topology
    node = topo.leaves[leaf_pos]
    d = params.d_x
    if params.hierarchical and topo.parent[node] >= 0:
        par = topo.parent[node]
        prior_mean = vec_ab(params.A[par], params.b[par])
    else:
        prior_mean = np.zeros(d * (d + 1))
    if params.hierarchical:
        prior_cov = params.hierarchy.cov_at_depth(topo.depth[node])
    else:
        prior_cov = params.hierarchy.sigma_eps
    X, dX = regression_pairs(states, leaf_pos)
    q_prec = _prec(params.Q[leaf_pos])
    if X.shape[0] == 0:
        P0 = _prec(prior_cov)
        return symmetrize(P0), P0 @ prior_mean
    return matrix_regression_info(prior_mean, prior_cov, _with_intercept(X), dX,
                                  q_prec)


def update_leaf_dynamics(params, states, leaf_pos, rng):
    """Draw (A_k, b_k) from its Gaussian conditional (prior when no data)."""
    J, h = leaf_dynamics_info(params, states, leaf_pos)
    w = mvn_info_draw(J, h, rng)
    return unvec_ab(w, params.d_x)


def leaf_noise_posterior(params, states, leaf_pos):
    """(df, scale) of the inverse-Wishart conditional for Q_k."""
    node = params.topology.leaves[leaf_pos]
    X, dX = regression_pairs(states, leaf_pos)
    resid = dX - X @ params.A[node].T - params.b[node]
    df = params.priors.q_df + X.shape[0]
    scale = params.priors.q_scale + resid.T @ resid
    return df, symmetrize(scale)


def update_leaf_noise(params, states, leaf_pos, rng):
    df, scale = leaf_noise_posterior(params, states, leaf_pos)
    return np.atleast_2d(invwishart.rvs(df=df, scale=scale, random_state=rng))


# --- internal-node dynamics -----------------------------------------------------

def internal_dynamics_info(params, node):
    """Gaussian conditional of an internal node: parent prior times the
    children's likelihood terms; precisions add."""
    topo = params.topology
    d = params.d_x
    p = d * (d + 1)
    depth = topo.depth[node]
    P_own = _prec(params.hierarchy.cov_at_depth(depth))
    if node == 0:
        mean_par = np.zeros(p)
    else:
        par = topo.parent[node]
        mean_par = vec_ab(params.A[par], params.b[par])
    J = P_own.copy()
    h = P_own @ mean_par
    for child in topo.children[node]:
        P_c = _prec(params.hierarchy.cov_at_depth(topo.depth[child]))
        J += P_c
        h += P_c @ vec_ab(params.A[child], params.b[child])
    return symmetrize(J), h


def update_internal_dynamics(params, node, rng):
    J, h = internal_dynamics_info(params, node)
    w = mvn_info_draw(J, h, rng)
    return unvec_ab(w, params.d_x)


# --- emissions -------------------------------------------------------------------

def _emission_pairs(params, trials, states):
    if not states:
        return np.zeros((0, params.d_x)), np.zeros((0, params.d_y))
    X = np.concatenate([st.x[1:] for st in states], axis=0)
    Y = np.concatenate([tr.y for tr in trials], axis=0)
    return X, Y


def emission_mniw_posterior(params, trials, states):
    """MNIW posterior ((M_n, V_n), (df_n, Psi_n)) of the Gaussian emission."""
    pr = params.priors
    X, Y = _emission_pairs(params, trials, states)
    Xt = _with_intercept(X)
    V0_inv = _prec(pr.emis_col_cov)
    Vn_inv = V0_inv + Xt.T @ Xt
    Ln = chol_psd(Vn_inv, "emission column precision")
    Mn = linalg.cho_solve((Ln, True), (V0_inv @ pr.emis_mean.T + Xt.T @ Y)).T
    df_n = pr.emis_df + Xt.shape[0]
    Psi_n = (pr.emis_scale + Y.T @ Y + pr.emis_mean @ V0_inv @ pr.emis_mean.T
             - Mn @ Vn_inv @ Mn.T)
    return Mn, symmetrize(Vn_inv), df_n, symmetrize(Psi_n)


def update_emission_gaussian(params, trials, states, rng):
    """Draw (C, d, S) from the MNIW conditional."""
    from .errors import IllPosedError

    X, _ = _emission_pairs(params, trials, states)
    if X.shape[0] < params.d_x + 1:
        raise IllPosedError("emission update needs at least d_x + 1 time steps")
    Mn, Vn_inv, df_n, Psi_n = emission_mniw_posterior(params, trials, states)
    S = np.atleast_2d(invwishart.rvs(df=df_n, scale=Psi_n, random_state=rng))
    # W = Mn + chol(S) Z chol(Vn)^T with Vn = Vn_inv^{-1}
    Ls = chol_psd(S, "S draw")
    Ln = chol_psd(Vn_inv, "emission column precision")
    Z = rng.standard_normal(Mn.shape)
    W = Mn + Ls @ linalg.solve_triangular(Ln, Z.T, lower=True, trans="T").T
    C, d = W[:, :params.d_x].copy(), W[:, params.d_x].copy()
    return C, d, S


def emission_bernoulli_row_info(params, trials, states, row):
    """Gaussian conditional of (c_n, d_n) for one Bernoulli output row."""
    pr = params.priors
    X = np.concatenate([st.x[1:] for st in states], axis=0)
    y = np.concatenate([tr.y[:, row] for tr in trials], axis=0)
    eta = np.concatenate([st.eta[:, row] for st in states], axis=0)
    kappa = y - 0.5
    prior_mean = pr.emis_mean[row]
    return weighted_regression_info(prior_mean, pr.emis_col_cov,
                                    _with_intercept(X), kappa, eta)


def update_emission_bernoulli(params, trials, states, rng):
    """Row-wise Gaussian draws of (C, d) given PG auxiliaries eta."""
    d_y, d_x = params.emission.C.shape
    C = np.empty((d_y, d_x))
    d = np.empty(d_y)
    for n in range(d_y):
        J, h = emission_bernoulli_row_info(params, trials, states, n)
        w = mvn_info_draw(J, h, rng)
        C[n] = w[:d_x]
        d[n] = w[d_x]
    return C, d


# --- gating hyperplanes -------------------------------------------------------------

def hyperplane_stats(params, states, internal_pos):
    """Regressors, kappa, and weights of all time steps routed through one
    internal node (its gate is exercised only on-path)."""
    signs_col = params.topology.routing_signs[:, internal_pos]
    xs, ks, ws = [], [], []
    for st in states:
        s_t = signs_col[st.z]  # +1 left, -1 right, 0 off-path at each step
        on = s_t != 0
        if not on.any():
            continue
        xs.append(st.x[:-1][on])
        ks.append(0.5 * s_t[on])
        ws.append(st.omega[on, internal_pos])
    if not xs:
        return None
    return (np.concatenate(xs), np.concatenate(ks), np.concatenate(ws))


def hyperplane_info(params, states, internal_pos):
    pr = params.priors
    d = params.d_x
    prior_mean = np.zeros(d + 1)
    stats = hyperplane_stats(params, states, internal_pos)
    if stats is None:
        P0 = _prec(pr.gate_cov)
        return symmetrize(P0), P0 @ prior_mean
    X, kappa, w = stats
    if np.isnan(w).any():
        raise ValueError("omega draws missing for on-path steps")
    return weighted_regression_info(prior_mean, pr.gate_cov,
                                    _with_intercept(X), kappa, w)


def update_hyperplane(params, states, internal_pos, rng, flip_kappa_sign=False):
    """Draw (R_n, r_n); ``flip_kappa_sign`` deliberately corrupts the update
    (used by the Geweke mutation check only)."""
    if flip_kappa_sign:
        stats = hyperplane_stats(params, states, internal_pos)
        if stats is None:
            J, h = hyperplane_info(params, states, internal_pos)
        else:
            X, kappa, w = stats
            J, h = weighted_regression_info(np.zeros(params.d_x + 1),
                                            params.priors.gate_cov,
                                            _with_intercept(X), -kappa, w)
    else:
        J, h = hyperplane_info(params, states, internal_pos)
    w_vec = mvn_info_draw(J, h, rng)
    return w_vec[:params.d_x].copy(), float(w_vec[params.d_x])


# --- Polya-Gamma auxiliaries ----------------------------------------------------------

def update_recurrence_pg(params, state, rng):
    """omega draws for every (on-path internal node, time); NaN off-path."""
    topo = params.topology
    T = len(state.z)
    omega = np.full((T, topo.n_internal), np.nan)
    if topo.n_internal == 0:
        return omega
    on = topo.routing_signs[state.z] != 0  # (T, n_internal)
    nu = state.x[:-1] @ params.R.T + params.r
    omega[on] = sample_pg(1, nu[on], rng)
    return omega


def update_emission_pg(params, state, rng):
    """eta draws, one per (output, time), for the Bernoulli emission."""
    if params.emission.kind != "bernoulli":
        return None
    ups = state.x[1:] @ params.emission.C.T + params.emission.d
    return sample_pg(1, ups.reshape(-1), rng).reshape(ups.shape)
