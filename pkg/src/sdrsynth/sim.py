"""Closed-loop / open-loop simulation, disturbance injection, and data generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .model import BasisLibrary, GroundTruthCoefficients, SdrModel, evaluate_dynamics

DEFAULT_CONVERGENCE_THRESHOLD = 1e-3
CONVERGENCE_RUN = 10  # consecutive steps below threshold
BLOWUP_THRESHOLD = 1e6
NOISE_FILL_FRACTION = 0.7  # nominal noise energy as a fraction of the bound


def saturate(u, u_max):
    """Componentwise sign(u) * min(|u|, u_max); exact when |u| <= u_max."""
    u = np.asarray(u, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    return np.sign(u) * np.minimum(np.abs(u), u_max)


def dead_zone(u, u_max):
    """phi(u) = sat(u) - u."""
    return saturate(u, u_max) - np.asarray(u, dtype=float)


def make_stepper(dynamics):
    """Build x,u -> A(x)x + B(x)u from an SdrModel or a (library, truth) pair."""
    if isinstance(dynamics, SdrModel):
        return lambda x, u: evaluate_dynamics(dynamics, x, u)
    lib, truth = dynamics
    if not isinstance(lib, BasisLibrary) or not isinstance(truth, GroundTruthCoefficients):
        raise ConfigError("dynamics must be an SdrModel or a (BasisLibrary, GroundTruthCoefficients) pair")

    def step_fn(x, u):
        x = np.asarray(x, dtype=float).reshape(lib.n)
        u = np.asarray(u, dtype=float).reshape(lib.m)
        return truth.E_A @ (lib.xi_A(x) @ x) + truth.E_B @ (lib.xi_B(x) @ u)

    return step_fn


def step(dynamics, x, u, w=None, u_max=None):
    """One exact step x+ = A(x)x + B(x) sat(u) + w (saturation only if u_max given)."""
    step_fn = make_stepper(dynamics)
    u = np.asarray(u, dtype=float)
    applied = saturate(u, u_max) if u_max is not None else u
    x_next = step_fn(x, applied)
    if w is not None:
        x_next = x_next + np.asarray(w, dtype=float)
    return x_next


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    x0: np.ndarray
    gain: np.ndarray | None = None          # closed loop u = Kx
    input_signal: object = None             # open loop: (T, m) array or callable k -> u
    u_max: np.ndarray | None = None
    disturbance: object = None              # None | ("uniform", bound) | (T, n) array
    seed: int = 0
    convergence_threshold: float = DEFAULT_CONVERGENCE_THRESHOLD

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.u_max is not None and np.any(np.asarray(self.u_max, dtype=float) <= 0):
            raise ConfigError("saturation levels must be positive")
        if (self.gain is None) == (self.input_signal is None):
            raise ConfigError("exactly one of gain / input_signal must be given")


@dataclass
class Trajectory:
    states: np.ndarray        # (T+1, n)
    inputs_pre: np.ndarray    # (T, m)
    inputs_post: np.ndarray   # (T, m)
    disturbances: np.ndarray  # (T, n)
    converged: bool
    convergence_step: int | None
    diverged: bool = False

    @property
    def horizon(self):
        return self.inputs_pre.shape[0]


def _disturbance_at(spec, rng, k, n):
    if spec is None:
        return np.zeros(n)
    if isinstance(spec, tuple) and len(spec) == 2 and spec[0] == "uniform":
        return rng.uniform(-spec[1], spec[1], size=n)
    arr = np.asarray(spec, dtype=float)
    return arr[k]


def rollout(dynamics, config: SimConfig, stream: int = 0) -> Trajectory:
    """Deterministic rollout; the RNG stream is (seed, stream) so batches can
    run in any order without changing results."""
    step_fn = make_stepper(dynamics)
    x = np.asarray(config.x0, dtype=float).copy()
    n = x.shape[0]
    rng = np.random.default_rng([config.seed, stream])
    T = config.horizon
    m = None
    states = [x.copy()]
    upre, upost, ws = [], [], []
    converged = False
    conv_step = None
    run = 0
    diverged = False
    for k in range(T):
        if config.gain is not None:
            u = np.asarray(config.gain, dtype=float) @ x
        elif callable(config.input_signal):
            u = np.asarray(config.input_signal(k), dtype=float)
        else:
            u = np.asarray(config.input_signal, dtype=float)[k]
        u = np.atleast_1d(u)
        m = u.shape[0]
        applied = saturate(u, config.u_max) if config.u_max is not None else u
        w = _disturbance_at(config.disturbance, rng, k, n)
        x = step_fn(x, applied) + w
        states.append(x.copy())
        upre.append(u)
        upost.append(applied)
        ws.append(w)
        nx = float(np.linalg.norm(x))
        if nx > BLOWUP_THRESHOLD:
            diverged = True
            break
        if nx <= config.convergence_threshold:
            if conv_step is None:
                conv_step = k + 1
            run += 1
            if run >= CONVERGENCE_RUN:
                converged = True
        else:
            run = 0
            conv_step = None if not converged else conv_step
    return Trajectory(
        states=np.asarray(states),
        inputs_pre=np.asarray(upre).reshape(-1, m),
        inputs_post=np.asarray(upost).reshape(-1, m),
        disturbances=np.asarray(ws).reshape(-1, n),
        converged=converged,
        convergence_step=conv_step,
        diverged=diverged,
    )


def phase_portrait(dynamics, K, region, density=21, u_max=None):
    """Sampled one-step flow field for a planar closed loop.

    Returns a dict with sample points, their images under the closed loop,
    and the applied inputs; CSV-friendly (see cli.write_phase_csv).
    """
    step_fn = make_stepper(dynamics)
    n = dynamics.n if isinstance(dynamics, SdrModel) else dynamics[0].n
    if n != 2:
        raise UsageError("phase portraits require a two-dimensional state")
    K = np.asarray(K, dtype=float)
    lo, hi = region
    axis = np.linspace(lo, hi, density)
    pts, nxt, u_pre, u_post = [], [], [], []
    for a in axis:
        for b in axis:
            x = np.array([a, b])
            u = K @ x
            applied = saturate(u, u_max) if u_max is not None else u
            pts.append(x)
            nxt.append(step_fn(x, applied))
            u_pre.append(u)
            u_post.append(applied)
    return {
        "points": np.asarray(pts),
        "next_points": np.asarray(nxt),
        "inputs_pre": np.asarray(u_pre),
        "inputs_post": np.asarray(u_post),
    }


@dataclass
class ExperimentBatch:
    """Raw experiments plus the noise realization and its verified margin."""

    trajectories: list            # per experiment: dict(states, inputs, noise)
    theta: np.ndarray
    noise_matrix: np.ndarray      # D0, n x T_total
    theta_margin: float           # min eig(Theta - D0 D0')
    resamples: int = 0

    @property
    def total_samples(self):
        return self.noise_matrix.shape[1]


def generate_experiments(
    lib: BasisLibrary,
    truth: GroundTruthCoefficients,
    input_spec,
    theta,
    count: int,
    length: int,
    seed: int,
    x0_spec=("uniform", 0.0),
    state_cap: float | None = None,
    max_resamples: int = 200,
) -> ExperimentBatch:
    """Run `count` open-loop experiments of `length` transitions each.

    input_spec: ("uniform", lo, hi) or a callable k -> u (shape (m,)).
    x0_spec: ("uniform", half_width) for the initial state box.
    The process noise is i.i.d. uniform with half-width
    NOISE_FILL_FRACTION * sqrt(3 * lmin(Theta) / T_total); the realized
    D0 D0' <= Theta is verified and violating batches are resampled from the
    next substream.  Experiments whose state leaves |x|_inf <= state_cap are
    re-drawn individually (open-loop escape guard).
    """
    theta = np.asarray(theta, dtype=float)
    n, m = lib.n, lib.m
    if theta.shape != (n, n):
        raise ConfigError(f"theta must be {n} x {n}")
    T_total = count * length
    lmin_theta = float(np.linalg.eigvalsh(theta).min())
    if lmin_theta < 0:
        raise ConfigError("theta must be positive semidefinite")
    delta = NOISE_FILL_FRACTION * np.sqrt(3.0 * lmin_theta / T_total)
    step_fn = make_stepper((lib, truth))

    def input_at(rng, k):
        if callable(input_spec):
            return np.asarray(input_spec(k), dtype=float).reshape(m)
        kind, lo, hi = input_spec
        if kind != "uniform":
            raise ConfigError(f"unknown input spec {input_spec!r}")
        return rng.uniform(lo, hi, size=m)

    for batch_try in range(max_resamples):
        trajectories = []
        noise_cols = []
        for e in range(count):
            got = None
            for attempt in range(max_resamples):
                rng = np.random.default_rng([seed, batch_try, e, attempt])
                kind, half = x0_spec
                if kind != "uniform":
                    raise ConfigError(f"unknown x0 spec {x0_spec!r}")
                x = rng.uniform(-half, half, size=n) if half > 0 else np.zeros(n)
                xs, us, ds = [x.copy()], [], []
                escaped = False
                for k in range(length):
                    u = input_at(rng, k)
                    d = rng.uniform(-delta, delta, size=n) if delta > 0 else np.zeros(n)
                    x = step_fn(x, u) + d
                    if state_cap is not None and np.abs(x).max() > state_cap:
                        escaped = True
                        break
                    xs.append(x.copy())
                    us.append(u)
                    ds.append(d)
                if not escaped:
                    got = {
                        "states": np.asarray(xs),
                        "inputs": np.asarray(us).reshape(length, m),
                        "noise": np.asarray(ds).reshape(length, n),
                    }
                    break
            if got is None:
                raise DataError(
                    f"experiment {e} kept escaping |x|_inf <= {state_cap} "
                    f"after {max_resamples} attempts"
                )
            trajectories.append(got)
            noise_cols.append(got["noise"].T)
        D0 = np.hstack(noise_cols)
        margin = float(np.linalg.eigvalsh(theta - D0 @ D0.T).min())
        if margin >= 0:
            return ExperimentBatch(trajectories, theta, D0, margin, resamples=batch_try)
    raise DataError(
        f"noise energy bound violated after {max_resamples} batch resamples"
    )
