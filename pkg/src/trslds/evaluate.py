"""k-step forecasting and the MSE_k / R^2_k metrics.

Forecast protocol: a collapsed Gaussian-sum filter runs causally over the
full observation sequence, so the latent estimate at each forecast origin
conditions only on data up to the origin.  From each origin the generative
dynamics roll forward noise-free (at every step the most probable leaf's
mean dynamics apply; a Monte Carlo variant samples leaves and noise), the
emission mean maps the state to observation space, and predictions average
over the retained posterior samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .stick_breaking import sigmoid, tree_leaf_probs
from .util import symmetrize


def collapsed_filter(params, y):
    """Causal filtered estimates: means (T+1, d_x) and covariances
    (T+1, d_x, d_x); entry t conditions on y[:t]."""
    T, d_y = y.shape
    d = params.d_x
    em = params.emission
    leaves = list(params.topology.leaves)
    K = params.n_leaves
    F = np.stack([np.eye(d) + params.A[n] for n in leaves])
    b = np.stack([params.b[n] for n in leaves])

    means = np.zeros((T + 1, d))
    covs = np.zeros((T + 1, d, d))
    m, P = params.priors.x0_mean.copy(), params.priors.x0_cov.copy()
    means[0], covs[0] = m, P
    for t in range(1, T + 1):
        w = tree_leaf_probs(m, params.R, params.r, params.topology)
        mk = F @ m + b                          # (K, d)
        Pk = F @ P @ F.transpose(0, 2, 1) + params.Q
        m_pred = w @ mk
        dev = mk - m_pred
        P_pred = np.einsum("k,kij->ij", w, Pk) + np.einsum(
            "k,ki,kj->ij", w, dev, dev)
        if em.kind == "gaussian":
            H = em.C
            resid = y[t - 1] - (em.C @ m_pred + em.d)
            R_obs = em.S
        else:
            mu = sigmoid(em.C @ m_pred + em.d)
            H = (mu * (1 - mu))[:, None] * em.C
            resid = y[t - 1] - mu
            R_obs = np.diag(mu * (1 - mu) + 1e-6)
        Sm = H @ P_pred @ H.T + R_obs
        K_gain = np.linalg.solve(Sm, H @ P_pred).T
        m = m_pred + K_gain @ resid
        P = symmetrize((np.eye(d) - K_gain @ H) @ P_pred)
        means[t], covs[t] = m, P
    return means, covs


def rollout_mean(params, x0s, k_max, stochastic=False, rng=None, n_mc=20):
    """Noise-free rollout of the leaf dynamics from a batch of starting
    points; returns (n, k_max + 1, d_x) with step 0 the inputs themselves.

    The deterministic default applies, at every step, the mean dynamics of
    the most probable leaf.  ``stochastic=True`` instead averages ``n_mc``
    sampled rollouts (leaves and process noise drawn from the model).
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n, d = x0s.shape
    leaves = list(params.topology.leaves)
    A = np.stack([params.A[m] for m in leaves])
    b = np.stack([params.b[m] for m in leaves])
    if not stochastic:
        out = np.zeros((n, k_max + 1, d))
        out[:, 0] = x0s
        x = x0s.copy()
        for k in range(1, k_max + 1):
            probs = tree_leaf_probs(x, params.R, params.r, params.topology)
            z = probs.argmax(axis=1)
            x = x + np.einsum("nij,nj->ni", A[z], x) + b[z]
            out[:, k] = x
        return out
    chol = np.linalg.cholesky(params.Q)
    acc = np.zeros((n, k_max + 1, d))
    for _ in range(n_mc):
        x = x0s.copy()
        acc[:, 0] += x
        for k in range(1, k_max + 1):
            probs = tree_leaf_probs(x, params.R, params.r, params.topology)
            u = rng.random(n)
            z = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            z = np.minimum(z, len(leaves) - 1)
            noise = np.einsum("nij,nj->ni", chol[z], rng.standard_normal((n, d)))
            x = x + np.einsum("nij,nj->ni", A[z], x) + b[z] + noise
            acc[:, k] += x
    return acc / n_mc


def k_step_forecast(samples, y, t_train, k_max, stochastic=False, rng=None):
    """Averaged k-step predictions over posterior samples for one trial.

    Returns (k_max + 1, T_test, d_y) where entry [k, j] predicts the test
    point at window position j from the origin j - k; positions without a
    valid origin (j < k) are NaN.  Row 0 is the filtered reconstruction.
    """
    if not samples:
        raise ValueError("need at least one posterior sample")
    T, d_y = y.shape
    if k_max >= T:
        raise ValueError("k_max must be smaller than the trial length")
    T_test = T - t_train
    acc = np.zeros((k_max + 1, T_test, d_y))
    for params in samples:
        means, _ = collapsed_filter(params, y)
        # latent at x-time t_train + o + 1 aligns with the test observation
        # at window position o and conditions on data up to that point
        origins = means[t_train + 1:T + 1]
        rolled = rollout_mean(params, origins, k_max, stochastic=stochastic,
                              rng=rng)
        for k in range(k_max + 1):
            pred = params.emission.mean(rolled[:, k])  # origin o predicts o + k
            row = np.full((T_test, d_y), np.nan)
            if k == 0:
                row[:] = pred
            else:
                row[k:] = pred[:T_test - k]
            acc[k] += row
    return acc / len(samples)


def mse_r2(y_window, preds_k, k):
    """Eq.-style k-step metrics for one trial window.

    ``preds_k`` holds predictions aligned to the window (NaN where no origin
    exists).  The denominator centers on the window mean; a constant window
    yields (mse, nan) with a warning.
    """
    y_window = np.asarray(y_window, dtype=float)
    T = y_window.shape[0]
    if not 0 <= k < T:
        raise ValueError("k must satisfy 0 <= k < window length")
    targets = y_window[k:]
    pred = np.asarray(preds_k)[k:]
    err = ((targets - pred) ** 2).sum(axis=1)
    mse = float(err.mean())
    ybar = y_window.mean(axis=0)
    denom = ((targets - ybar) ** 2).sum()
    if denom <= 1e-12:
        warnings.warn("constant trial window: R^2 undefined", RuntimeWarning)
        return mse, float("nan")
    return mse, float(1.0 - err.sum() / denom)


@dataclass
class ForecastReport:
    ks: np.ndarray                 # evaluated horizons, 1..k_max
    mse: np.ndarray                # (k_max,) mean over trials
    r2: np.ndarray                 # (k_max,) mean over trials (NaN-skipped)
    per_trial_mse: np.ndarray      # (n_trials, k_max)
    per_trial_r2: np.ndarray
    trial_ids: list
    metadata: dict = field(default_factory=dict)

    def to_rows(self):
        """CSV-friendly rows: (k, mse, r2) per horizon."""
        return [(int(k), float(m), float(r))
                for k, m, r in zip(self.ks, self.mse, self.r2)]


def forecast_report(samples, trials, t_train, k_max, stochastic=False,
                    rng=None, metadata=None):
    """Full evaluation across trials: per-trial metrics plus averages
    (per-trial numerators and denominators pooled within each trial, R^2
    then averaged across trials)."""
    n = len(trials)
    per_mse = np.zeros((n, k_max))
    per_r2 = np.zeros((n, k_max))
    for i, trial in enumerate(trials):
        preds = k_step_forecast(samples, trial.y, t_train, k_max,
                                stochastic=stochastic, rng=rng)
        window = trial.y[t_train:]
        for k in range(1, k_max + 1):
            per_mse[i, k - 1], per_r2[i, k - 1] = mse_r2(window, preds[k], k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        r2 = np.nanmean(per_r2, axis=0)
    return ForecastReport(
        ks=np.arange(1, k_max + 1), mse=per_mse.mean(axis=0), r2=r2,
        per_trial_mse=per_mse, per_trial_r2=per_r2,
        trial_ids=[tr.id for tr in trials], metadata=metadata or {},
    )
