"""Latent-state sampling: forward-filter backward-sample for the continuous
states and conditionally independent categorical draws for the discrete
states.

Filtering runs in information (precision) form because the augmented
recurrence potentials are rank-one Gaussian factors on x_{t-1}: adding
information matrices is exact where covariance-form updates would need the
inverse of a degenerate factor.  The recurrence factor introduced by z_t
attaches to x_{t-1} and is folded in just before x_{t-1} is marginalized.

The pass is batched over a leading axis: the Gibbs engine stacks trials of
equal length, and the oracle tests stack independent draws of one trial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericError
from .stick_breaking import tree_leaf_log_probs
from .util import LOG_2PI, symmetrize


def _batch_chol(J, what):
    try:
        return np.linalg.cholesky(symmetrize(J))
    except np.linalg.LinAlgError as e:
        raise NumericError(f"{what} is not positive definite") from e


@dataclass
class TrialPotentials:
    """Gaussian factors of one trial, shaped (T, ...) along time."""

    F: np.ndarray      # (T, d, d) transition maps I + A_{z_t}
    c: np.ndarray      # (T, d) transition offsets b_{z_t}
    Qinv: np.ndarray   # (T, d, d) transition precisions
    Jr: np.ndarray     # (T, d, d) recurrence information on x_{t-1}
    hr: np.ndarray     # (T, d)
    Je: np.ndarray     # (T, d, d) emission information on x_t
    he: np.ndarray     # (T, d)
    J0: np.ndarray     # (d, d) initial-state information
    h0: np.ndarray     # (d,)

    @property
    def T(self):
        return self.F.shape[0]


def assemble_potentials(params, trial, z, omega=None, eta=None):
    """Build the Gaussian potentials of one trial given fixed z (and the PG
    auxiliaries where they are required)."""
    topo = params.topology
    d = params.d_x
    T = trial.T
    leaves = np.asarray(topo.leaves)
    nodes = leaves[z]
    F = np.eye(d) + params.A[nodes]
    c = params.b[nodes]
    Qinv_leaf = np.stack([np.linalg.inv(params.Q[k]) for k in range(topo.n_leaves)])
    Qinv = Qinv_leaf[z]

    if topo.n_internal:
        if omega is None:
            raise ValueError("omega draws are required when the tree has gates")
        signs = topo.routing_signs[z].astype(float)  # (T, n_int)
        on = signs != 0
        w = np.where(on, omega, 0.0)
        if np.isnan(w).any():
            raise ValueError("omega is NaN on the path of z")
        kappa = 0.5 * signs
        Jr = np.einsum("tn,ni,nj->tij", w, params.R, params.R)
        hr = (kappa - w * params.r) @ params.R
    else:
        Jr = np.zeros((T, d, d))
        hr = np.zeros((T, d))

    em = params.emission
    if em.kind == "gaussian":
        Sinv = np.linalg.inv(em.S)
        Je = np.broadcast_to(symmetrize(em.C.T @ Sinv @ em.C), (T, d, d)).copy()
        he = (trial.y - em.d) @ Sinv @ em.C
    else:
        if eta is None:
            raise ValueError("eta draws are required for bernoulli emissions")
        Je = np.einsum("tn,ni,nj->tij", eta, em.C, em.C)
        he = (trial.y - 0.5 - eta * em.d) @ em.C

    L0 = linalg.cholesky(params.priors.x0_cov, lower=True)
    J0 = linalg.cho_solve((L0, True), np.eye(d))
    h0 = J0 @ params.priors.x0_mean
    return TrialPotentials(F=F, c=c, Qinv=Qinv, Jr=Jr, hr=hr, Je=Je, he=he,
                           J0=symmetrize(J0), h0=h0)


@dataclass
class FilterMessages:
    """Forward-pass output needed by the backward sampler, batch-first."""

    J_aug: np.ndarray   # (B, T+1, d, d) filtered info incl. next recurrence
    h_aug: np.ndarray   # (B, T+1, d)
    M: np.ndarray       # (B, T, d, d) backward conditional precisions
    FtQi: np.ndarray    # (B, T, d, d) F^T Qinv per step
    c: np.ndarray       # (B, T, d)


def forward_pass(pots):
    """Information-form filtering over a batch of equally long trials.

    ``pots`` is a list of TrialPotentials sharing T; the batch axis is the
    list index.
    """
    B = len(pots)
    T = pots[0].T
    d = pots[0].F.shape[1]
    F = np.stack([p.F for p in pots])
    c = np.stack([p.c for p in pots])
    Qinv = np.stack([p.Qinv for p in pots])
    Jr = np.stack([p.Jr for p in pots])
    hr = np.stack([p.hr for p in pots])
    Je = np.stack([p.Je for p in pots])
    he = np.stack([p.he for p in pots])

    J_aug = np.zeros((B, T + 1, d, d))
    h_aug = np.zeros((B, T + 1, d))
    Ms = np.zeros((B, T, d, d))
    FtQi = np.zeros((B, T, d, d))

    J_f = np.stack([p.J0 for p in pots])
    h_f = np.stack([p.h0 for p in pots])
    for t in range(1, T + 1):
        i = t - 1
        Ja = symmetrize(J_f + Jr[:, i])
        ha = h_f + hr[:, i]
        J_aug[:, i] = Ja
        h_aug[:, i] = ha
        Ft = np.swapaxes(F[:, i], 1, 2)
        FtQ = Ft @ Qinv[:, i]
        FtQi[:, i] = FtQ
        M = symmetrize(Ja + FtQ @ F[:, i])
        Ms[:, i] = M
        _batch_chol(M, "forward message precision")  # fail fast, iteration-safe
        W = Qinv[:, i] @ F[:, i]
        Qc = np.einsum("bij,bj->bi", Qinv[:, i], c[:, i])
        a = ha - np.einsum("bij,bj->bi", FtQ, c[:, i])
        Minv_a = np.linalg.solve(M, a[..., None])[..., 0]
        Minv_Wt = np.linalg.solve(M, np.swapaxes(W, 1, 2))
        J_pred = symmetrize(Qinv[:, i] - W @ Minv_Wt)
        h_pred = Qc + np.einsum("bij,bj->bi", W, Minv_a)
        J_f = symmetrize(J_pred + Je[:, i])
        h_f = h_pred + he[:, i]
    J_aug[:, T] = J_f
    h_aug[:, T] = h_f
    return FilterMessages(J_aug=J_aug, h_aug=h_aug, M=Ms, FtQi=FtQi, c=c)


def backward_sample(msgs, normals):
    """Joint draw of x_{0:T} given forward messages and standard-normal
    innovations of shape (B, T+1, d)."""
    B, T1, d = normals.shape
    T = T1 - 1
    x = np.zeros((B, T + 1, d))

    def draw(J, h, z):
        L = _batch_chol(J, "sampling precision")
        mean = np.linalg.solve(J, h[..., None])[..., 0]
        dev = np.linalg.solve(np.swapaxes(L, -1, -2), z[..., None])[..., 0]
        return mean + dev

    x[:, T] = draw(msgs.J_aug[:, T], msgs.h_aug[:, T], normals[:, T])
    for t in range(T - 1, -1, -1):
        h = msgs.h_aug[:, t] + np.einsum("bij,bj->bi", msgs.FtQi[:, t],
                                         x[:, t + 1] - msgs.c[:, t])
        x[:, t] = draw(msgs.M[:, t], h, normals[:, t])
    return x


def ffbs(params, trial, z, omega=None, eta=None, rng=None, n_draws=None,
         normals=None):
    """Exact conditional draw(s) of the continuous trajectory of one trial.

    Returns (T+1, d) for the default single draw, or (n_draws, T+1, d).
    """
    pots = assemble_potentials(params, trial, z, omega=omega, eta=eta)
    B = 1 if n_draws is None else int(n_draws)
    msgs = forward_pass([pots] * B)
    if normals is None:
        normals = rng.standard_normal((B, trial.T + 1, params.d_x))
    x = backward_sample(msgs, normals)
    return x[0] if n_draws is None else x


def ffbs_batch(params, trials, zs, omegas, etas, normals_list):
    """FFBS for many trials at once, grouped by trial length."""
    out = [None] * len(trials)
    by_T = {}
    for i, tr in enumerate(trials):
        by_T.setdefault(tr.T, []).append(i)
    for T, idxs in by_T.items():
        pots = [assemble_potentials(params, trials[i], zs[i],
                                    omega=None if omegas is None else omegas[i],
                                    eta=None if etas is None else etas[i])
                for i in idxs]
        msgs = forward_pass(pots)
        normals = np.stack([normals_list[i] for i in idxs])
        x = backward_sample(msgs, normals)
        for j, i in enumerate(idxs):
            out[i] = x[j]
    return out


def discrete_log_posterior(params, x):
    """(T, K) unnormalized log p(z_t = k | x) = transition + gate terms."""
    X_prev, X_next = x[:-1], x[1:]
    T = X_prev.shape[0]
    K = params.n_leaves
    d = params.d_x
    leaves = list(params.topology.leaves)
    loglik = np.zeros((T, K))
    for k in range(K):
        pred = X_prev + X_prev @ params.A[leaves[k]].T + params.b[leaves[k]]
        dev = X_next - pred
        L = _batch_chol(params.Q[k], "Q")
        sol = linalg.solve_triangular(L, dev.T, lower=True)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        loglik[:, k] = -0.5 * (d * LOG_2PI + logdet + (sol ** 2).sum(axis=0))
    loggate = tree_leaf_log_probs(X_prev, params.R, params.r, params.topology)
    return loglik + loggate


def sample_discrete(params, x, rng=None, uniforms=None):
    """Per-step categorical draws of z given x (log-space, max-subtracted)."""
    logp = discrete_log_posterior(params, x)
    m = logp.max(axis=1, keepdims=True)
    if not np.isfinite(m).all():
        raise NumericError("all leaf log probabilities are -inf at some step")
    p = np.exp(logp - m)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(p.shape[0]) if uniforms is None else uniforms
    cum = np.cumsum(p, axis=1)
    z = (u[:, None] > cum).sum(axis=1)
    return np.minimum(z, params.n_leaves - 1).astype(int)
