"""Ground-truth data generators: FitzHugh-Nagumo, Lorenz, and a
NASCAR-style 4-regime switching system, plus the observation layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import TrialData
from .stick_breaking import sigmoid


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def euler_step(f, x, dt):
    return x + dt * f(x)


_STEPPERS = {"rk4": rk4_step, "euler": euler_step}


def integrate(f, x0, n_steps, dt, method="rk4"):
    """Integrate dx/dt = f(x) and return the n_steps visited states
    (including x0 as the first row)."""
    step = _STEPPERS[method]
    out = np.zeros((n_steps,) + np.shape(x0))
    out[0] = x0
    for i in range(1, n_steps):
        out[i] = step(f, out[i - 1], dt)
    return out


def fhn_deriv(x, i_ext, a=0.7, b=0.8, tau=12.5):
    v, w = x[..., 0], x[..., 1]
    dv = v - v ** 3 / 3.0 - w + i_ext
    dw = (v + a - b * w) / tau
    return np.stack([dv, dw], axis=-1)


def fhn_fixed_point(i_ext, a=0.7, b=0.8):
    """Root of the FHN nullcline intersection (real cubic root)."""
    # v - v^3/3 - (v + a)/b + i_ext = 0
    coeffs = [-1.0 / 3.0, 0.0, 1.0 - 1.0 / b, i_ext - a / b]
    roots = np.roots(coeffs)
    v = float(np.real(roots[np.argmin(np.abs(np.imag(roots)))]))
    return np.array([v, (v + a) / b])


def simulate_fhn(n_trajectories=100, n_steps=430, dt=0.1, rng=None,
                 a=0.7, b=0.8, tau=12.5, i_mean=0.7, i_var=0.04,
                 start_box=3.0, method="rk4"):
    """FitzHugh-Nagumo trajectories; the input current is drawn once per
    trajectory from N(i_mean, i_var) and held constant."""
    rng = np.random.default_rng(0) if rng is None else rng
    trajs = np.zeros((n_trajectories, n_steps, 2))
    currents = rng.normal(i_mean, np.sqrt(i_var), size=n_trajectories)
    for i in range(n_trajectories):
        x0 = rng.uniform(-start_box, start_box, size=2)
        trajs[i] = integrate(lambda x: fhn_deriv(x, currents[i], a, b, tau),
                             x0, n_steps, dt, method)
    return trajs, currents


def lorenz_deriv(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([sigma * (x2 - x1), x1 * (rho - x3) - x2,
                     x1 * x2 - beta * x3], axis=-1)


def simulate_lorenz(n_trajectories=50, n_steps=230, dt=0.01, rng=None,
                    sigma=10.0, rho=28.0, beta=8.0 / 3.0, burn_in=500,
                    method="rk4"):
    """Lorenz trajectories started on the attractor (random initial points
    relaxed through a burn-in segment that is discarded)."""
    rng = np.random.default_rng(0) if rng is None else rng
    trajs = np.zeros((n_trajectories, n_steps, 3))
    f = lambda x: lorenz_deriv(x, sigma, rho, beta)
    for i in range(n_trajectories):
        x0 = rng.normal(0.0, 5.0, size=3) + np.array([0.0, 0.0, 25.0])
        warm = integrate(f, x0, burn_in + 1, dt, method)
        trajs[i] = integrate(f, warm[-1], n_steps, dt, method)
    return trajs


@dataclass
class NascarSpec:
    """4-regime oval: two straightaways joined by two half turns."""

    ell: float = 2.0          # |x1| beyond which the turns engage
    height: float = 1.0       # straightaway offset from the x1 axis
    drift: float = 0.25       # straightaway speed
    turn_angle: float = np.pi / 10.0
    noise: float = 1e-3


def _nascar_regimes(spec):
    """Per-regime (A, b): 0 = right turn, 1 = left turn, 2 = bottom
    straight (+x1), 3 = top straight (-x1)."""
    th = spec.turn_angle
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    A_turn = rot - np.eye(2)
    regimes = []
    for center in (np.array([spec.ell, 0.0]), np.array([-spec.ell, 0.0])):
        regimes.append((A_turn, -A_turn @ center))
    regimes.append((np.zeros((2, 2)), np.array([spec.drift, 0.0])))
    regimes.append((np.zeros((2, 2)), np.array([-spec.drift, 0.0])))
    return regimes


def _nascar_regime_of(x, spec):
    if x[0] > spec.ell:
        return 0
    if x[0] < -spec.ell:
        return 1
    return 2 if x[1] < 0 else 3


def simulate_nascar(n_steps, rng=None, spec=None, x0=None):
    """One oval lap after another; returns (states (n_steps+1, 2),
    regimes (n_steps,))."""
    rng = np.random.default_rng(0) if rng is None else rng
    spec = spec or NascarSpec()
    regimes = _nascar_regimes(spec)
    x = np.zeros((n_steps + 1, 2))
    z = np.zeros(n_steps, dtype=int)
    x[0] = np.array([-spec.ell, -spec.height]) if x0 is None else np.asarray(x0)
    for t in range(1, n_steps + 1):
        k = _nascar_regime_of(x[t - 1], spec)
        z[t - 1] = k
        A, b = regimes[k]
        x[t] = x[t - 1] + A @ x[t - 1] + b + spec.noise * rng.standard_normal(2)
    return x, z


def tree_nascar_params(gate_scale=10.0, turn_angle=np.pi / 12.0,
                       speed_ratio=2.5, noise=1e-6):
    """TrSLDS instance whose four leaves trace a circular orbit: a balanced
    tree splits the plane into quadrants (top/bottom, then left/right) and
    each quadrant rotates about the origin at its own angular speed, so a
    lap visits all four regimes."""
    from .model import EmissionParams, HierarchyPrior, ModelParams, ModelPriors
    from .tree import build_tree

    topo = build_tree(4)
    d_x = 2
    A = np.zeros((topo.n_nodes, d_x, d_x))
    b = np.zeros((topo.n_nodes, d_x))
    angles = [turn_angle, turn_angle / speed_ratio,
              turn_angle / speed_ratio, turn_angle]
    for k, leaf in enumerate(topo.leaves):
        th = angles[k]
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        A[leaf] = rot - np.eye(2)
    for node in reversed(topo.internal_nodes):
        cl, cr = topo.children[node]
        A[node] = 0.5 * (A[cl] + A[cr])
    # root gate: top vs bottom half; level-2 gates: left vs right half
    R = np.zeros((topo.n_internal, d_x))
    r = np.zeros(topo.n_internal)
    R[topo.internal_index[0]] = [0.0, gate_scale]
    left, right = topo.children[0]
    R[topo.internal_index[left]] = [gate_scale, 0.0]
    R[topo.internal_index[right]] = [gate_scale, 0.0]
    Q = np.stack([noise * np.eye(2)] * 4)
    priors = ModelPriors.default(d_x, 2)
    em = EmissionParams("gaussian", np.eye(2), np.zeros(2), 1e-2 * np.eye(2))
    return ModelParams(topology=topo, A=A, b=b, Q=Q, R=R, r=r, emission=em,
                       hierarchy=HierarchyPrior.isotropic(d_x), priors=priors)


def observe_gaussian(trajs, C, d, S, rng):
    """y = C x + d + noise for a stack of trajectories (n, T, d_x)."""
    trajs = np.asarray(trajs, dtype=float)
    chol = np.linalg.cholesky(np.asarray(S, dtype=float))
    eta = trajs @ np.asarray(C, dtype=float).T + np.asarray(d, dtype=float)
    return eta + rng.standard_normal(eta.shape) @ chol.T


def observe_bernoulli(trajs, C, d, rng):
    """y ~ Bernoulli(sigma(C x + d)) elementwise."""
    eta = np.asarray(trajs) @ np.asarray(C).T + np.asarray(d)
    return (rng.random(eta.shape) < sigmoid(eta)).astype(float)


def make_trials(ys, kind="gaussian", prefix="trial"):
    return [TrialData(y, kind=kind, id=f"{prefix}{i:03d}")
            for i, y in enumerate(ys)]


FHN_DEFAULT_C = np.array([[2.0, 0.0], [0.0, -2.0]])
FHN_DEFAULT_D = np.array([0.5, 0.5])
FHN_DEFAULT_S = 0.01 * np.eye(2)


def random_projection(d_y, d_x, rng):
    """Random matrix with orthonormal columns (observation map fixture)."""
    M = rng.standard_normal((d_y, d_x))
    Qm, _ = np.linalg.qr(M)
    return Qm[:, :d_x]
