"""Rotation/scale canonicalization of the latent space.

The likelihood is unchanged under any invertible map x -> M x with the
parameters conjugated accordingly, so Gibbs chains drift through rotations
and scalings.  Between sweeps we move each sample to a canonical point of
its equivalence class: the emission matrix gets equalized column norms (a
diagonal scaling) and an upper-triangular top block (an RQ rotation).

The transformation of every parameter follows from the invariance contract
-- gate logits nu_n, whitened transition residuals, and emission means must
be numerically unchanged -- which forces, for x' = M x:

    A' = M A M^-1,  b' = M b,  Q' = M Q M^T,  R' = M^-T R,  C' = C M^-1,

with r, d, S untouched.  By default the overall map is rescaled to
|det M| = 1, which additionally leaves every transition and initial-state
log density invariant (a pure column normalization does not: each Gaussian
normalizer shifts by log|det M|).  The prior over dynamics (sigma_eps,
lambda) is a hyperparameter and is never transformed.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import linalg


def _colnorms(C):
    return np.sqrt((C ** 2).sum(axis=0))


def canonical_map(C, volume_preserving=True):
    """Invertible map M (x' = M x) bringing C to canonical form, or None
    when C is numerically rank deficient."""
    d_y, d_x = C.shape
    sv = np.linalg.svd(C, compute_uv=False)
    if d_y < d_x or sv[-1] < 1e-10 * max(sv[0], 1.0):
        return None
    D1 = _colnorms(C)
    B = C / D1
    U_top, O = linalg.rq(B[:d_x, :])
    s = np.sign(np.diag(U_top))
    s[s == 0] = 1.0
    O = s[:, None] * O
    B2 = B @ O.T
    D2 = _colnorms(B2)
    M = (D2[:, None] * O) * D1
    if volume_preserving:
        gamma = float(np.exp((np.log(D1).sum() + np.log(D2).sum()) / d_x))
        M = M / gamma
    return M


def apply_state_map(params, states, M):
    """Conjugate all state-space parameters and latents by x' = M x."""
    Minv = np.linalg.inv(M)
    p = params.copy()
    p.A = np.einsum("ij,njk,kl->nil", M, params.A, Minv)
    p.b = params.b @ M.T
    p.Q = np.einsum("ij,njk,lk->nil", M, params.Q, M)
    if p.R.size:
        p.R = params.R @ Minv  # rows R_n^T M^-1 keep every nu unchanged
    p.emission.C = params.emission.C @ Minv
    p.priors.x0_mean = M @ params.priors.x0_mean
    p.priors.x0_cov = M @ params.priors.x0_cov @ M.T
    new_states = []
    for st in states:
        st2 = st.copy()
        st2.x = st.x @ M.T
        new_states.append(st2)
    return p, new_states


def normalize_rotation(params, states, volume_preserving=True):
    """Canonicalize (params, latents); returns (params', states', info).

    info["applied"] is False (with a warning) when C is rank deficient.
    """
    M = canonical_map(params.emission.C, volume_preserving=volume_preserving)
    if M is None:
        warnings.warn("emission matrix is rank deficient; skipping "
                      "rotation normalization", RuntimeWarning)
        return params, states, {"applied": False, "map": None}
    p, sts = apply_state_map(params, states, M)
    sign, logdet = np.linalg.slogdet(M)
    return p, sts, {"applied": True, "map": M, "log_abs_det": float(logdet)}
