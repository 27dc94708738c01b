"""Exact Polya-Gamma sampling and analytic moments.

PG(1, c) draws use the alternating-series rejection sampler of Polson,
Scott & Windle (2013), built on Devroye's method for the Jacobi-type
distribution: PG(1, c) = J*(1, |c|/2) / 4.  Integer b sums b independent
PG(1, c) draws.  The truncated sum-of-gammas representation is provided
separately as a slow, slightly biased reference for testing; the rejection
sampler is the one used during inference.
"""

from __future__ import annotations

import numpy as np

_TRUNC = 0.64  # proposal split point for J*(1, z)


def pg_mean(b, c):
    """E[PG(b, c)] = b/(2c) tanh(c/2), with the stable c -> 0 limit b/4."""
    if b < 1:
        raise ValueError("b must be >= 1")
    c = float(c)
    if abs(c) < 1e-6:
        # tanh(c/2)/(2c) = 1/4 - c^2/48 + O(c^4)
        return b * (0.25 - c * c / 48.0)
    return b / (2.0 * c) * np.tanh(c / 2.0)


def pg_var(b, c):
    """Var[PG(b, c)] = b (sinh(c) - c) sech^2(c/2) / (4 c^3); limit b/24 at c=0."""
    if b < 1:
        raise ValueError("b must be >= 1")
    c = float(c)
    if abs(c) < 1e-4:
        return b / 24.0
    sech2 = 1.0 / np.cosh(c / 2.0) ** 2
    return b * (np.sinh(c) - c) * sech2 / (4.0 * c ** 3)


def _log_norm_cdf(x):
    from scipy.special import log_ndtr

    return log_ndtr(x)


def _mass_texpon(z):
    """Probability that the J*(1,z) proposal uses the right-tail exponential."""
    t = _TRUNC
    fz = np.pi ** 2 / 8.0 + z ** 2 / 2.0
    b = np.sqrt(1.0 / t) * (t * z - 1.0)
    a = -np.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    log_qdivp = np.log(4.0 / np.pi) + np.logaddexp(xb, xa)
    # 1 / (1 + e^v) computed without exponentiating a large v
    with np.errstate(over="ignore"):
        return np.where(log_qdivp > 0,
                        np.exp(-log_qdivp) / (1.0 + np.exp(-log_qdivp)),
                        1.0 / (1.0 + np.exp(log_qdivp)))


def _rtigauss(z, rng):
    """Inverse-Gaussian(mu=1/z, lambda=1) draws truncated to (0, _TRUNC).

    Vectorized over the array ``z`` (entries >= 0; z == 0 means mu = inf).
    """
    z = np.asarray(z, dtype=float)
    t = _TRUNC
    out = np.empty_like(z)

    # mu > t: rejection from a truncated chi^2-based proposal
    big = z < 1.0 / t
    idx = np.nonzero(big)[0]
    while idx.size:
        m = idx.size
        e1 = rng.standard_exponential(m)
        e2 = rng.standard_exponential(m)
        ok = e1 * e1 <= 2.0 * e2 / t
        x = t / (1.0 + t * e1) ** 2
        alpha = np.exp(-0.5 * z[idx] ** 2 * x)
        accept = ok & (rng.random(m) < alpha)
        out[idx[accept]] = x[accept]
        idx = idx[~accept]

    # mu <= t: standard IG transform, retrying draws that land past t
    idx = np.nonzero(~big)[0]
    while idx.size:
        m = idx.size
        mu = 1.0 / z[idx]
        y = rng.standard_normal(m) ** 2
        x = mu + 0.5 * mu * mu * y - 0.5 * mu * np.sqrt(4.0 * mu * y + (mu * y) ** 2)
        flip = rng.random(m) > mu / (mu + x)
        x[flip] = (mu[flip] ** 2) / x[flip]
        accept = x <= t
        out[idx[accept]] = x[accept]
        idx = idx[~accept]

    return out


def _a_coef(n, x):
    """n-th coefficient of the alternating series for the J*(1, .) density."""
    small = x <= _TRUNC
    out = np.empty_like(x)
    k = n + 0.5
    out[~small] = np.pi * k * np.exp(-(k ** 2) * np.pi ** 2 * x[~small] / 2.0)
    xs = x[small]
    out[small] = (2.0 / np.pi / xs) ** 1.5 * np.pi * k * np.exp(-2.0 * k ** 2 / xs)
    return out


def _series_accept(x, rng):
    """Alternating-series accept/reject step; vectorized over proposals x."""
    accept = np.zeros(x.shape, dtype=bool)
    s = _a_coef(0, x)
    y = rng.random(x.shape) * s
    undecided = np.ones(x.shape, dtype=bool)
    n = 0
    while undecided.any():
        n += 1
        idx = np.nonzero(undecided)[0]
        an = _a_coef(n, x[idx])
        if n % 2 == 1:
            s[idx] -= an
            done = y[idx] <= s[idx]
            accept[idx[done]] = True
        else:
            s[idx] += an
            done = y[idx] > s[idx]
        undecided[idx[done]] = False
    return accept


def _pg1(c, rng):
    """Vectorized exact PG(1, c_i) draws for an array of tilts c."""
    c = np.asarray(c, dtype=float)
    z = np.abs(c) / 2.0  # PG(1, c) = J*(1, |c|/2) / 4; symmetric in c
    out = np.empty_like(z)
    pending = np.arange(z.size)
    zf = z.reshape(-1)
    while pending.size:
        zp = zf[pending]
        m = pending.size
        use_exp = rng.random(m) < _mass_texpon(zp)
        x = np.empty(m)
        if use_exp.any():
            fz = np.pi ** 2 / 8.0 + zp[use_exp] ** 2 / 2.0
            x[use_exp] = _TRUNC + rng.standard_exponential(use_exp.sum()) / fz
        if (~use_exp).any():
            x[~use_exp] = _rtigauss(zp[~use_exp], rng)
        accept = _series_accept(x, rng)
        out.reshape(-1)[pending[accept]] = x[accept]
        pending = pending[~accept]
    return out / 4.0


def sample_pg(b, c, rng, size=None):
    """Exact draw(s) from PG(b, c).

    Parameters
    ----------
    b : positive integer (general b is the sum of b PG(1, c) draws).
    c : scalar or array of tilting parameters; PG(b, c) == PG(b, -c).
    rng : numpy Generator.
    size : optional number of draws when ``c`` is scalar.

    Returns
    -------
    Scalar draw for scalar ``c`` and size None, else an array.
    """
    if int(b) != b or b < 1:
        raise ValueError("b must be a positive integer")
    b = int(b)
    scalar = np.isscalar(c) and size is None
    c_arr = np.full(size, float(c)) if (np.isscalar(c) and size is not None) \
        else np.atleast_1d(np.asarray(c, dtype=float))
    total = _pg1(c_arr, rng)
    for _ in range(b - 1):
        total = total + _pg1(c_arr, rng)
    if scalar:
        return float(total[0])
    return total


def sample_pg_sum_of_gammas(b, c, rng, size, n_terms=10_000):
    """Truncated sum-of-gammas reference sampler (biased; test oracle only).

    omega = (1 / 2 pi^2) sum_k g_k / ((k - 1/2)^2 + c^2 / (4 pi^2)),
    g_k ~ Gamma(b, 1).
    """
    if int(b) != b or b < 1:
        raise ValueError("b must be a positive integer")
    k = np.arange(1, n_terms + 1)
    denom = (k - 0.5) ** 2 + float(c) ** 2 / (4.0 * np.pi ** 2)
    g = rng.standard_gamma(float(b), size=(size, n_terms))
    return (g / denom).sum(axis=1) / (2.0 * np.pi ** 2)
