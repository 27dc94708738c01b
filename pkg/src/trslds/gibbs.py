"""Gibbs sweep orchestration, chain management, and the Geweke test.

Scan order (fixed): PG auxiliaries -> continuous states (FFBS, per trial)
-> discrete states (per trial) -> refreshed recurrence auxiliaries -> leaf
dynamics and noise -> internal dynamics (leaf to root) -> hyperplanes ->
emissions -> optional rotation normalization.

The discrete states are drawn with the recurrence auxiliaries collapsed
(their conditional is the plain categorical), so omega is refreshed right
after the z block: the hyperplane conditional needs auxiliaries keyed to
the *current* paths, and reusing draws keyed to the old paths would break
the invariant distribution.

Reductions over trials always run in trial-id order and every trial owns an
RNG stream keyed by (seed, iteration, trial id), so chains are bit-identical
under permutations of the dataset.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import conjugate as cj
from .errors import NumericError
from .latents import ffbs_batch, sample_discrete
from .model import (
    LatentState,
    default_params,
    log_joint,
    simulate_trial,
)
from .normalize import normalize_rotation
from .util import rng_for, stable_hash


@dataclass
class GibbsConfig:
    num_iterations: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    fix_emissions: bool = False
    fix_hyperplanes: bool = False
    normalize_every: int = 1  # iterations between normalizations; 0 = off

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be >= 1")
        if not 0 <= self.burn_in < self.num_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < num_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass
class ChainRecord:
    samples: list
    sample_iterations: list
    log_joint: np.ndarray
    wall_time: np.ndarray
    best_index: int
    final_params: object
    final_states: list
    config: GibbsConfig

    @property
    def best(self):
        return self.samples[self.best_index]


def _sorted_by_id(trials, states):
    order = sorted(range(len(trials)), key=lambda i: str(trials[i].id))
    return [trials[i] for i in order], [states[i] for i in order]


def _trial_rng(config_seed, iteration, trial_id):
    return rng_for(config_seed, 1, iteration, stable_hash(str(trial_id)))


def gibbs_sweep(params, trials, states, iteration, config, param_rng,
                corrupt_hyperplane=False):
    """One full scan; mutates ``states`` in place and returns new params.

    ``trials``/``states`` must already be sorted by trial id.
    """
    topo = params.topology

    # -- PG auxiliaries, then continuous states, per trial ----------------
    normals = []
    uniforms = []
    for trial, st in zip(trials, states):
        rng_t = _trial_rng(config.seed, iteration, trial.id)
        st.omega = cj.update_recurrence_pg(params, st, rng_t)
        st.eta = cj.update_emission_pg(params, st, rng_t)
        normals.append(rng_t.standard_normal((trial.T + 1, params.d_x)))
        uniforms.append(rng_t.random(trial.T))  # for the z draw below
    xs = ffbs_batch(params, trials, [st.z for st in states],
                    [st.omega for st in states],
                    [st.eta for st in states] if params.emission.kind == "bernoulli"
                    else None, normals)
    for st, x in zip(states, xs):
        st.x = x

    # -- discrete states (auxiliaries collapsed), refresh omega -----------
    if topo.n_leaves > 1:
        for trial, st, u in zip(trials, states, uniforms):
            st.z = sample_discrete(params, st.x, uniforms=u)
        for trial, st in zip(trials, states):
            rng_t = _trial_rng(config.seed, iteration, f"{trial.id}:refresh")
            st.omega = cj.update_recurrence_pg(params, st, rng_t)

    params = params.copy()

    # -- leaf dynamics and noise -------------------------------------------
    for k in range(topo.n_leaves):
        node = topo.leaves[k]
        params.A[node], params.b[node] = cj.update_leaf_dynamics(
            params, states, k, param_rng)
        params.Q[k] = cj.update_leaf_noise(params, states, k, param_rng)

    # -- internal dynamics, leaf-to-root ------------------------------------
    if params.hierarchical and topo.n_internal:
        for node in sorted(topo.internal_nodes, key=lambda n: -topo.depth[n]):
            params.A[node], params.b[node] = cj.update_internal_dynamics(
                params, node, param_rng)

    # -- hyperplanes -----------------------------------------------------------
    if not config.fix_hyperplanes:
        for i in range(topo.n_internal):
            R_i, r_i = cj.update_hyperplane(params, states, i, param_rng,
                                            flip_kappa_sign=corrupt_hyperplane)
            params.R[i] = R_i
            params.r[i] = r_i

    # -- emissions ----------------------------------------------------------------
    if not config.fix_emissions:
        if params.emission.kind == "gaussian":
            C, d, S = cj.update_emission_gaussian(params, trials, states, param_rng)
            params.emission.C, params.emission.d, params.emission.S = C, d, S
        else:
            C, d = cj.update_emission_bernoulli(params, trials, states, param_rng)
            params.emission.C, params.emission.d = C, d

    return params


def run_chain(trials, init_params, init_states, config, progress=None):
    """Run the Gibbs chain; retains post-burn-in thinned samples and tags the
    highest-log-joint one as the point estimate."""
    trials, states = _sorted_by_id(trials, [st.copy() for st in init_states])
    params = init_params.copy()
    param_rng = rng_for(config.seed, 0)

    samples, sample_iterations = [], []
    lj_trace = np.zeros(config.num_iterations)
    wall = np.zeros(config.num_iterations)
    for it in range(config.num_iterations):
        t0 = time.perf_counter()
        try:
            params = gibbs_sweep(params, trials, states, it, config, param_rng)
        except NumericError as e:
            raise NumericError(f"iteration {it}: {e}") from e
        if config.normalize_every and (it + 1) % config.normalize_every == 0:
            params, states, _ = normalize_rotation(params, states)
        lj_trace[it] = log_joint(params, trials, states)
        wall[it] = time.perf_counter() - t0
        if it >= config.burn_in and (it - config.burn_in) % config.thinning == 0:
            samples.append(params.copy())
            sample_iterations.append(it)
        if progress is not None:
            progress(it, lj_trace[it])

    best = int(np.argmax([lj_trace[i] for i in sample_iterations]))
    return ChainRecord(
        samples=samples, sample_iterations=sample_iterations,
        log_joint=lj_trace, wall_time=wall, best_index=best,
        final_params=params, final_states=states, config=config,
    )


# --- Geweke joint-distribution test ---------------------------------------------


def _geweke_functionals(params, trials, states):
    """Twenty scalar summaries of (params, latents, data)."""
    topo = params.topology
    leaf0, leaf1 = topo.leaves[0], topo.leaves[1]
    X = np.concatenate([st.x for st in states])
    Y = np.concatenate([tr.y for tr in trials])
    Z = np.concatenate([st.z for st in states])
    nu = np.concatenate([st.x[:-1] @ params.R.T + params.r for st in states])
    lag1 = np.mean([np.corrcoef(st.x[:-1, 0], st.x[1:, 0])[0, 1]
                    if np.std(st.x[:, 0]) > 1e-12 else 0.0 for st in states])
    em = params.emission
    out = {
        "A_root": params.A[0].mean(),
        "b_root": params.b[0].mean(),
        "A_leaf0": params.A[leaf0].mean(),
        "A_leaf1": params.A[leaf1].mean(),
        "b_leaf0": params.b[leaf0].mean(),
        "b_leaf1": params.b[leaf1].mean(),
        "log_Q0": np.log(params.Q[0, 0, 0]),
        "log_Q1": np.log(params.Q[1, 0, 0]),
        "R_root": params.R[0].mean(),
        "r_root": float(params.r[0]),
        "C_00": em.C[0, 0],
        "C_10": em.C[1, 0],
        "d_0": em.d[0],
        "log_det_S": float(np.linalg.slogdet(em.S)[1]),
        "x_mean": X.mean(),
        "x_sq_mean": np.tanh(X ** 2).mean(),
        "nu_mean": np.tanh(nu).mean(),
        "z_frac": (Z == 0).mean(),
        "y_mean": np.tanh(Y).mean(),
        "x_lag1": lag1,
    }
    return out


def _batch_means_se(series, n_batches=40):
    n = len(series)
    m = n // n_batches
    means = np.array([series[i * m:(i + 1) * m].mean() for i in range(n_batches)])
    return means.std(ddof=1) / np.sqrt(n_batches)


@dataclass
class GewekeReport:
    names: list
    z_scores: np.ndarray
    mc_means: np.ndarray
    sc_means: np.ndarray
    n_rounds: int
    threshold: float = 4.0

    @property
    def max_abs_z(self):
        return float(np.abs(self.z_scores).max())

    @property
    def passed(self):
        return bool(self.max_abs_z < self.threshold)

    def summary(self):
        lines = [f"{'functional':<12} {'mc':>10} {'sc':>10} {'z':>8}"]
        for name, mc, sc, z in zip(self.names, self.mc_means, self.sc_means,
                                   self.z_scores):
            lines.append(f"{name:<12} {mc:>10.4f} {sc:>10.4f} {z:>8.2f}")
        lines.append(f"max |z| = {self.max_abs_z:.2f} "
                     f"({'PASS' if self.passed else 'FAIL'} at {self.threshold})")
        return "\n".join(lines)


def geweke_test(n_rounds=5000, T=10, K=2, d_x=1, d_y=2, n_trials=2, seed=0,
                tau=0.5, lam=0.5, corrupt_hyperplane=False, skip=2):
    """Compare ancestral simulation against the successive-conditional
    sampler on a tiny model; mismatching conditionals shift the z-scores.

    The successive-conditional stream alternates one Gibbs sweep with a
    fresh ancestral draw of (x, z, y) given the current parameters.  Means
    of 20 scalar functionals are compared; |z| above ~4 indicates a broken
    conditional.  ``corrupt_hyperplane`` flips the kappa sign inside the
    hyperplane update to demonstrate the test's sensitivity.
    """
    from .model import ModelPriors

    def make_priors():
        pr = ModelPriors.default(d_x, d_y)
        pr.x0_cov = np.eye(d_x)
        return pr

    def prior_draw(rng):
        return default_params(K, d_x, d_y, rng=rng, tau=tau, lam=lam,
                              priors=make_priors())

    def simulate_all(params, rng):
        trials, states = [], []
        for i in range(n_trials):
            tr, st = simulate_trial(params, rng, T, trial_id=f"g{i}")
            trials.append(tr)
            states.append(st)
        return trials, states

    names = None
    mc_rows, sc_rows = [], []

    rng_mc = rng_for(seed, 100)
    for _ in range(n_rounds):
        params = prior_draw(rng_mc)
        trials, states = simulate_all(params, rng_mc)
        f = _geweke_functionals(params, trials, states)
        names = list(f.keys())
        mc_rows.append(list(f.values()))

    config = GibbsConfig(num_iterations=1, burn_in=0, seed=int(seed) + 7,
                         normalize_every=0)
    rng_sc = rng_for(seed, 200)
    param_rng = rng_for(seed, 300)
    params = prior_draw(rng_sc)
    trials, states = simulate_all(params, rng_sc)
    trials, states = _sorted_by_id(trials, states)
    for round_idx in range(n_rounds * skip):
        params = gibbs_sweep(params, trials, states, round_idx, config,
                             param_rng, corrupt_hyperplane=corrupt_hyperplane)
        trials, states = simulate_all(params, rng_sc)
        trials, states = _sorted_by_id(trials, states)
        if round_idx % skip == skip - 1:
            f = _geweke_functionals(params, trials, states)
            sc_rows.append(list(f.values()))

    mc = np.asarray(mc_rows)
    sc = np.asarray(sc_rows)
    z = np.zeros(mc.shape[1])
    for j in range(mc.shape[1]):
        se_mc = mc[:, j].std(ddof=1) / np.sqrt(len(mc))
        se_sc = _batch_means_se(sc[:, j])
        z[j] = (mc[:, j].mean() - sc[:, j].mean()) / np.hypot(se_mc, se_sc)
    return GewekeReport(names=names, z_scores=z, mc_means=mc.mean(axis=0),
                        sc_means=sc.mean(axis=0), n_rounds=n_rounds)
