"""Shared numeric helpers."""

from __future__ import annotations

import hashlib

import numpy as np
from scipy import linalg

from .errors import NumericError

LOG_2PI = np.log(2.0 * np.pi)


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def chol_psd(a, what="matrix"):
    """Cholesky factor of a PSD matrix; raises NumericError when it is not."""
    try:
        return np.linalg.cholesky(symmetrize(np.asarray(a, dtype=float)))
    except np.linalg.LinAlgError as e:
        raise NumericError(f"{what} is not positive definite") from e


def mvn_logpdf(x, mean, cov=None, chol=None):
    """Multivariate normal log density; ``x`` may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if chol is None:
        chol = chol_psd(cov, "covariance")
    dev = x - mean
    sol = linalg.solve_triangular(chol, dev[..., None] if dev.ndim == 1 else dev.T,
                                  lower=True)
    if dev.ndim == 1:
        maha = float((sol ** 2).sum())
    else:
        maha = (sol ** 2).sum(axis=0)
    d = chol.shape[0]
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * LOG_2PI + logdet + maha)


def mvn_info_draw(J, h, rng, size=None):
    """Draw from N(J^{-1} h, J^{-1}) given information parameters."""
    L = chol_psd(J, "information matrix")
    mean = linalg.cho_solve((L, True), h)
    shape = mean.shape if size is None else (size,) + mean.shape
    z = rng.standard_normal(shape)
    dev = linalg.solve_triangular(L, z.T, lower=True, trans="T").T
    return mean + dev


def draw_mvn(mean, cov, rng):
    L = chol_psd(cov, "covariance")
    return np.asarray(mean, dtype=float) + L @ rng.standard_normal(len(mean))


def stable_hash(s):
    """Stable 64-bit integer key for a string (for keyed RNG streams)."""
    digest = hashlib.blake2s(str(s).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(seed, *keys):
    """Generator keyed by (seed, *keys); stable across processes."""
    ints = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        ints.append(int(k) & 0xFFFFFFFFFFFFFFFF if not isinstance(k, str)
                    else stable_hash(k))
    return np.random.default_rng(np.random.SeedSequence(ints))
