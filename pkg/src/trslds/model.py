"""Generative model: per-node linear dynamics, hierarchical prior, residual
reparameterization, simulation, and the log joint.

Conventions
-----------
* The latent trajectory of a length-T trial is ``x[0..T]`` (T+1 states); the
  observations are ``y[1..T]`` stored as ``y[0..T-1]``.  ``z[t-1]`` is the
  leaf *position* (0..K-1) governing the transition from ``x[t-1]`` to
  ``x[t]``.
* A transition is ``x_t = x_{t-1} + A_z x_{t-1} + b_z + w_t`` with
  ``w_t ~ N(0, Q_z)``.
* ``vec_ab(A, b)`` flattens the stacked matrix ``[A | b]`` row-major; all
  priors over dynamics parameters live on that vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.stats import invwishart

from . import stick_breaking as sb
from .errors import NumericError
from .tree import TreeTopology, build_tree
from .util import LOG_2PI, chol_psd, draw_mvn, mvn_logpdf, symmetrize


def vec_ab(A, b):
    """Row-major flattening of [A | b]."""
    return np.concatenate([A, b[:, None]], axis=1).reshape(-1)


def unvec_ab(w, d):
    W = np.asarray(w, dtype=float).reshape(d, d + 1)
    return W[:, :d].copy(), W[:, d].copy()


@dataclass
class HierarchyPrior:
    """Gaussian tree prior on vec([A_n, b_n]) with geometrically shrinking
    covariance: root ~ N(0, sigma_eps), child | parent ~ N(parent,
    lam^depth(child) * sigma_eps)."""

    sigma_eps: np.ndarray  # (p, p), p = d_x * (d_x + 1)
    lam: float = 0.5

    def __post_init__(self):
        self.sigma_eps = symmetrize(np.asarray(self.sigma_eps, dtype=float))
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie strictly inside (0, 1)")
        chol_psd(self.sigma_eps, "sigma_eps")

    @classmethod
    def isotropic(cls, d_x, tau=1.0, lam=0.5):
        return cls(tau ** 2 * np.eye(d_x * (d_x + 1)), lam)

    def cov_at_depth(self, depth):
        return self.lam ** depth * self.sigma_eps


@dataclass
class EmissionParams:
    kind: str  # "gaussian" | "bernoulli"
    C: np.ndarray  # (d_y, d_x)
    d: np.ndarray  # (d_y,)
    S: np.ndarray | None = None  # (d_y, d_y), gaussian only

    def __post_init__(self):
        if self.kind not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown emission kind {self.kind!r}")
        self.C = np.asarray(self.C, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.kind == "gaussian":
            if self.S is None:
                raise ValueError("gaussian emission requires S")
            self.S = symmetrize(np.asarray(self.S, dtype=float))
        elif self.S is not None:
            raise ValueError("bernoulli emission carries no S")

    @property
    def d_y(self):
        return self.C.shape[0]

    def mean(self, x):
        """Emission mean: Cx + d for gaussian, sigma(Cx + d) for bernoulli."""
        eta = np.asarray(x) @ self.C.T + self.d
        return eta if self.kind == "gaussian" else sb.sigmoid(eta)


@dataclass
class ModelPriors:
    """Hyperpriors for everything except the dynamics hierarchy."""

    x0_mean: np.ndarray
    x0_cov: np.ndarray
    q_df: float
    q_scale: np.ndarray  # (d_x, d_x) inverse-Wishart scale for the leaf noise
    gate_cov: np.ndarray  # ((d_x+1,) square) prior cov of (R_n, r_n), mean 0
    emis_mean: np.ndarray  # (d_y, d_x+1) matrix-normal mean of [C | d]
    emis_col_cov: np.ndarray  # (d_x+1, d_x+1) column covariance
    emis_df: float  # IW df on S (gaussian kind)
    emis_scale: np.ndarray  # (d_y, d_y) IW scale on S

    @classmethod
    def default(cls, d_x, d_y):
        return cls(
            x0_mean=np.zeros(d_x),
            x0_cov=10.0 * np.eye(d_x),
            q_df=d_x + 2.0,
            q_scale=1e-2 * np.eye(d_x),
            gate_cov=10.0 * np.eye(d_x + 1),
            emis_mean=np.zeros((d_y, d_x + 1)),
            emis_col_cov=10.0 * np.eye(d_x + 1),
            emis_df=d_y + 2.0,
            emis_scale=1e-2 * np.eye(d_y),
        )

    def copy(self):
        return ModelPriors(
            x0_mean=self.x0_mean.copy(), x0_cov=self.x0_cov.copy(),
            q_df=self.q_df, q_scale=self.q_scale.copy(),
            gate_cov=self.gate_cov.copy(), emis_mean=self.emis_mean.copy(),
            emis_col_cov=self.emis_col_cov.copy(), emis_df=self.emis_df,
            emis_scale=self.emis_scale.copy(),
        )


@dataclass
class ModelParams:
    """Full parameter set of one model instance.

    ``A``/``b`` are indexed by node id; ``Q`` by leaf position; hyperplanes
    ``R``/``r`` by internal-node position (``topology.internal_nodes``
    order).  ``hierarchical=False`` drops the tree prior on dynamics (leaves
    are independent N(0, sigma_eps) and internal nodes carry no dynamics) —
    that is the sequential-stick rSLDS configuration when paired with a comb
    topology.
    """

    topology: TreeTopology
    A: np.ndarray  # (n_nodes, d_x, d_x)
    b: np.ndarray  # (n_nodes, d_x)
    Q: np.ndarray  # (K, d_x, d_x)
    R: np.ndarray  # (n_internal, d_x)
    r: np.ndarray  # (n_internal,)
    emission: EmissionParams
    hierarchy: HierarchyPrior
    priors: ModelPriors
    hierarchical: bool = True

    @property
    def d_x(self):
        return self.A.shape[1]

    @property
    def d_y(self):
        return self.emission.d_y

    @property
    def n_leaves(self):
        return self.topology.n_leaves

    def leaf_A(self):
        """(K, d_x, d_x) dynamics gathered in leaf order."""
        return self.A[list(self.topology.leaves)]

    def leaf_b(self):
        return self.b[list(self.topology.leaves)]

    def leaf_log_probs(self, x):
        return sb.tree_leaf_log_probs(x, self.R, self.r, self.topology)

    def copy(self):
        return replace(
            self,
            A=self.A.copy(), b=self.b.copy(), Q=self.Q.copy(),
            R=self.R.copy(), r=self.r.copy(),
            emission=EmissionParams(
                self.emission.kind, self.emission.C.copy(), self.emission.d.copy(),
                None if self.emission.S is None else self.emission.S.copy()),
            priors=self.priors.copy(),
        )


@dataclass
class TrialData:
    y: np.ndarray  # (T, d_y)
    kind: str = "gaussian"
    id: str = "trial"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 2:
            raise ValueError("y must be (T, d_y)")

    @property
    def T(self):
        return self.y.shape[0]


@dataclass
class LatentState:
    """Per-trial latent block.

    ``omega[t-1, i]`` is the recurrence auxiliary for internal position i at
    time t; entries off the path of ``z[t-1]`` are NaN.  ``eta`` mirrors that
    for Bernoulli emissions, one draw per (output, time).
    """

    x: np.ndarray  # (T+1, d_x)
    z: np.ndarray  # (T,) leaf positions
    omega: np.ndarray | None = None  # (T, n_internal)
    eta: np.ndarray | None = None  # (T, d_y)

    def copy(self):
        return LatentState(
            self.x.copy(), self.z.copy(),
            None if self.omega is None else self.omega.copy(),
            None if self.eta is None else self.eta.copy(),
        )


def sample_prior_dynamics(hierarchy, topology, rng, hierarchical=True):
    """Draw (A, b) arrays from the tree prior (or independent leaf priors)."""
    d_sq = hierarchy.sigma_eps.shape[0]
    d = int((np.sqrt(4 * d_sq + 1) - 1) / 2)
    A = np.zeros((topology.n_nodes, d, d))
    b = np.zeros((topology.n_nodes, d))
    if hierarchical:
        order = sorted(range(topology.n_nodes), key=lambda n: topology.depth[n])
        for n in order:
            depth = topology.depth[n]
            mean = np.zeros(d_sq) if n == 0 else vec_ab(A[topology.parent[n]],
                                                        b[topology.parent[n]])
            w = draw_mvn(mean, hierarchy.cov_at_depth(depth), rng)
            A[n], b[n] = unvec_ab(w, d)
    else:
        for n in topology.leaves:
            w = draw_mvn(np.zeros(d_sq), hierarchy.sigma_eps, rng)
            A[n], b[n] = unvec_ab(w, d)
    return A, b


def leaf_transition_logdensity(x_t, x_prev, leaf_pos, params):
    """log N(x_t | x_prev + A_z x_prev + b_z, Q_z) for one step."""
    node = params.topology.leaves[leaf_pos]
    mean = x_prev + params.A[node] @ x_prev + params.b[node]
    return float(mvn_logpdf(np.asarray(x_t, dtype=float), mean,
                            params.Q[leaf_pos]))


def to_residual(params):
    """Per-node increments over the parent: A_res[root] = A[root],
    A_res[n] = A[n] - A[parent(n)]."""
    topo = params.topology
    A_res = params.A.copy()
    b_res = params.b.copy()
    for n in range(1, topo.n_nodes):
        A_res[n] = params.A[n] - params.A[topo.parent[n]]
        b_res[n] = params.b[n] - params.b[topo.parent[n]]
    return A_res, b_res


def from_residual(A_res, b_res, topology):
    """Invert :func:`to_residual` by summing increments along each path."""
    A = A_res.copy()
    b = b_res.copy()
    order = sorted(range(topology.n_nodes), key=lambda n: topology.depth[n])
    for n in order:
        if n != 0:
            A[n] = A_res[n] + A[topology.parent[n]]
            b[n] = b_res[n] + b[topology.parent[n]]
    return A, b


def simulate(params, x0, T, rng):
    """Ancestral draw of (x[0..T], z[1..T], y[1..T]) from the model."""
    if T < 1:
        raise ValueError("T must be >= 1")
    d = params.d_x
    x = np.zeros((T + 1, d))
    x[0] = np.asarray(x0, dtype=float)
    z = np.zeros(T, dtype=int)
    chol_Q = np.stack([chol_psd(params.Q[k], "Q") for k in range(params.n_leaves)])
    leaves = list(params.topology.leaves)
    for t in range(1, T + 1):
        node = sb.sample_leaf(x[t - 1], params.R, params.r, params.topology, rng)
        k = params.topology.leaf_index[node]
        z[t - 1] = k
        mean = x[t - 1] + params.A[leaves[k]] @ x[t - 1] + params.b[leaves[k]]
        x[t] = mean + chol_Q[k] @ rng.standard_normal(d)
    eta = x[1:] @ params.emission.C.T + params.emission.d
    if params.emission.kind == "gaussian":
        chol_S = chol_psd(params.emission.S, "S")
        y = eta + rng.standard_normal(eta.shape) @ chol_S.T
    else:
        y = (rng.random(eta.shape) < sb.sigmoid(eta)).astype(float)
    return x, z, y


def simulate_trial(params, rng, T, trial_id="trial"):
    x0 = draw_mvn(params.priors.x0_mean, params.priors.x0_cov, rng)
    x, z, y = simulate(params, x0, T, rng)
    return TrialData(y, kind=params.emission.kind, id=trial_id), \
        LatentState(x=x, z=z)


def _transition_loglik(params, state, A=None, b=None):
    """Sum of transition log densities for one trial; optional override of
    the per-node dynamics arrays (used by the residual parameterization)."""
    A = params.A if A is None else A
    b = params.b if b is None else b
    x = state.x
    z = state.z
    leaves = np.asarray(params.topology.leaves)
    nodes = leaves[z]
    pred = x[:-1] + np.einsum("tij,tj->ti", A[nodes], x[:-1]) + b[nodes]
    dev = x[1:] - pred
    total = 0.0
    for k in range(params.n_leaves):
        m = z == k
        if not m.any():
            continue
        L = chol_psd(params.Q[k], "Q")
        sol = linalg.solve_triangular(L, dev[m].T, lower=True)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        total += -0.5 * (m.sum() * (params.d_x * LOG_2PI + logdet)
                         + (sol ** 2).sum())
    return float(total)


def _recurrence_loglik(params, state):
    if params.topology.n_internal == 0:
        return 0.0
    logp = params.leaf_log_probs(state.x[:-1])
    return float(logp[np.arange(len(state.z)), state.z].sum())


def _emission_loglik(params, trial, state):
    em = params.emission
    eta = state.x[1:] @ em.C.T + em.d
    if em.kind == "gaussian":
        L = chol_psd(em.S, "S")
        dev = trial.y - eta
        sol = linalg.solve_triangular(L, dev.T, lower=True)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        return float(-0.5 * (trial.y.shape[0] * (em.d_y * LOG_2PI + logdet)
                             + (sol ** 2).sum()))
    ls_pos = sb.log_sigmoid(eta)
    ls_neg = sb.log_sigmoid(-eta)
    return float((trial.y * ls_pos + (1.0 - trial.y) * ls_neg).sum())


def _x0_loglik(params, state):
    return float(mvn_logpdf(state.x[0], params.priors.x0_mean, params.priors.x0_cov))


def _dynamics_prior_logpdf(params, A=None, b=None, residual=False):
    """Tree prior over dynamics.  With ``residual=True`` the nodes are
    independent N(0, lam^depth sigma_eps) (the residual parameterization);
    otherwise each node is shrunk toward its parent."""
    A = params.A if A is None else A
    b = params.b if b is None else b
    topo = params.topology
    hier = params.hierarchy
    total = 0.0
    if not params.hierarchical:
        for n in topo.leaves:
            total += mvn_logpdf(vec_ab(A[n], b[n]), np.zeros(A.shape[1] * (A.shape[1] + 1)),
                                hier.sigma_eps)
        return float(total)
    for n in range(topo.n_nodes):
        depth = topo.depth[n]
        if residual or n == 0:
            mean = np.zeros_like(vec_ab(A[n], b[n]))
        else:
            mean = vec_ab(A[topo.parent[n]], b[topo.parent[n]])
        total += mvn_logpdf(vec_ab(A[n], b[n]), mean, hier.cov_at_depth(depth))
    return float(total)


def _hyper_prior_logpdf(params):
    """Log prior of Q, the hyperplanes, and the emission parameters."""
    pr = params.priors
    total = 0.0
    for k in range(params.n_leaves):
        total += invwishart.logpdf(params.Q[k], df=pr.q_df, scale=pr.q_scale)
    for i in range(params.topology.n_internal):
        w = np.concatenate([params.R[i], [params.r[i]]])
        total += mvn_logpdf(w, np.zeros_like(w), pr.gate_cov)
    em = params.emission
    W = np.concatenate([em.C, em.d[:, None]], axis=1)
    if em.kind == "gaussian":
        total += invwishart.logpdf(em.S, df=pr.emis_df, scale=pr.emis_scale)
        row_cov = em.S
    else:
        row_cov = np.eye(em.d_y)
    # matrix normal MN(M, rowcov, colcov) == N(vec(W); vec(M), kron(row, col))
    total += mvn_logpdf(W.reshape(-1), pr.emis_mean.reshape(-1),
                        np.kron(row_cov, pr.emis_col_cov))
    return float(total)


def log_joint_terms(params, trials, states, A=None, b=None, residual=False):
    """Per-group log-density terms of the joint; ``sum(values())`` is the
    full log joint."""
    if len(trials) != len(states):
        raise ValueError("trials and states must align")
    terms = {
        "dynamics_prior": _dynamics_prior_logpdf(params, A=A, b=b, residual=residual),
        "hyper_prior": _hyper_prior_logpdf(params),
        "x0": 0.0, "transition": 0.0, "recurrence": 0.0, "emission": 0.0,
    }
    for trial, state in zip(trials, states):
        if state.x.shape[0] != trial.T + 1:
            raise ValueError(f"latents of trial {trial.id} do not match its length")
        terms["x0"] += _x0_loglik(params, state)
        terms["transition"] += _transition_loglik(params, state, A=A, b=b)
        terms["recurrence"] += _recurrence_loglik(params, state)
        terms["emission"] += _emission_loglik(params, trial, state)
    return terms


def log_joint(params, trials, states):
    """Log joint density of parameters, latents, and data."""
    return float(sum(log_joint_terms(params, trials, states).values()))


def residual_log_joint(params, trials, states, A_res=None, b_res=None):
    """Log joint under the residual parameterization (independent increments;
    leaf dynamics are path sums).  Equals :func:`log_joint` when the
    residuals are ``to_residual(params)``."""
    if A_res is None or b_res is None:
        A_res, b_res = to_residual(params)
    A_sum, b_sum = from_residual(A_res, b_res, params.topology)
    terms = log_joint_terms(params, trials, states, A=A_sum, b=b_sum)
    terms["dynamics_prior"] = _dynamics_prior_logpdf(params, A=A_res, b=b_res,
                                                     residual=True)
    return float(sum(terms.values()))


def default_params(K, d_x, d_y, rng=None, kind="gaussian", tau=1.0, lam=0.5,
                   topology=None, hierarchical=True, priors=None):
    """Convenience constructor: topology + prior draw of every parameter."""
    rng = np.random.default_rng(0) if rng is None else rng
    topo = build_tree(K) if topology is None else topology
    hier = HierarchyPrior.isotropic(d_x, tau=tau, lam=lam)
    pr = ModelPriors.default(d_x, d_y) if priors is None else priors
    A, b = sample_prior_dynamics(hier, topo, rng, hierarchical=hierarchical)
    Q = np.stack([np.atleast_2d(invwishart.rvs(df=pr.q_df, scale=pr.q_scale,
                                               random_state=rng))
                  for _ in range(topo.n_leaves)])
    gate_chol = chol_psd(pr.gate_cov)
    Rr = (gate_chol @ rng.standard_normal((d_x + 1, topo.n_internal))).T \
        if topo.n_internal else np.zeros((0, d_x + 1))
    col_chol = chol_psd(pr.emis_col_cov)
    Z = rng.standard_normal((d_y, d_x + 1))
    if kind == "gaussian":
        S = np.atleast_2d(invwishart.rvs(df=pr.emis_df, scale=pr.emis_scale,
                                         random_state=rng))
        W = pr.emis_mean + chol_psd(S) @ Z @ col_chol.T
        em = EmissionParams("gaussian", W[:, :d_x].copy(), W[:, d_x].copy(), S)
    else:
        W = pr.emis_mean + Z @ col_chol.T
        em = EmissionParams("bernoulli", W[:, :d_x].copy(), W[:, d_x].copy())
    return ModelParams(
        topology=topo, A=A, b=b, Q=Q,
        R=Rr[:, :d_x].copy() if topo.n_internal else np.zeros((0, d_x)),
        r=Rr[:, d_x].copy() if topo.n_internal else np.zeros(0),
        emission=em, hierarchy=hier, priors=pr, hierarchical=hierarchical,
    )
