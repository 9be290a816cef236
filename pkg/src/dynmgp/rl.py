"""Mountain-car environment and offline model-based policy optimization.

Transition samples from two stationary historical environments and a short
non-stationary target run are fused into a transition model (single-output
GP, static multi-output GP, or the dynamic sparse model), a value function
is fitted on a fixed support grid and improved by one-step lookahead value
iteration, and the greedy policy is rolled out under the post-change true
dynamics.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .baselines import GpParams, _se_kernel, gp_fit, mgp_l1_fit
from .inference import FitConfig, fit
from .model import Dataset, HardSlab, OutputSeries, SpikeSlabConfig, softplus
from .prediction import Predictor

__all__ = [
    "CarState", "EnvSpec", "RlConfig", "TransitionSamples", "step", "reward",
    "collect_source_samples", "collect_target_samples", "fit_transition",
    "policy_iterate", "rollout", "null_policy", "run_rl",
    "write_trajectory_csv",
    "SOURCE_ENVS", "TARGET_ENV_BEFORE", "TARGET_ENV_AFTER",
]

POS_MIN, POS_MAX = -1.2, 1.0
VEL_MIN, VEL_MAX = -0.07, 0.07
GOAL_POS, GOAL_VEL = 0.45, 0.0
REWARD_STD = (0.05, 0.0035)

SOURCE_ENVS = ((0.01, 0.0015), (0.001, 0.0025))
TARGET_ENV_BEFORE = (0.009, 0.0015)
TARGET_ENV_AFTER = (0.0011, 0.0026)


@dataclass(frozen=True)
class CarState:
    pos: float
    vel: float


@dataclass(frozen=True)
class EnvSpec:
    """Horizontal power unit and vertical force unit."""

    P: float
    G: float

    def __post_init__(self):
        if self.P <= 0 or self.G <= 0:
            raise ValueError("P and G must be positive")


@dataclass
class RlConfig:
    support_side: int = 16         # support grid is support_side^2 states
    max_steps: int = 600
    n_actions: int = 9
    # the discounted horizon must cover the few-hundred-step climb, and the
    # value interpolator needs smoothing plus clamping to stay contractive
    discount: float = 0.99
    v_tol: float = 1e-4
    max_sweeps: int = 300
    value_nugget: float = 1e-2
    source_count: int = 200
    target_counts: tuple = (20, 20)
    seed: int = 0

    @property
    def action_grid(self):
        return np.linspace(-1.0, 1.0, self.n_actions)

    @property
    def support_points(self):
        pos = np.linspace(POS_MIN, POS_MAX, self.support_side)
        vel = np.linspace(VEL_MIN, VEL_MAX, self.support_side)
        P, V = np.meshgrid(pos, vel, indexing="ij")
        return np.column_stack([P.ravel(), V.ravel()])


def step(state: CarState, action: float, env: EnvSpec) -> CarState:
    """One transition: velocity updates first, then position; both clipped."""
    vel = state.vel + env.P * action - env.G * np.cos(3.0 * state.pos)
    vel = float(np.clip(vel, VEL_MIN, VEL_MAX))
    pos = float(np.clip(state.pos + vel, POS_MIN, POS_MAX))
    return CarState(pos=pos, vel=vel)


def reward(states) -> np.ndarray:
    """Gaussian-density reward centered on the goal state."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    z_p = (states[:, 0] - GOAL_POS) / REWARD_STD[0]
    z_v = (states[:, 1] - GOAL_VEL) / REWARD_STD[1]
    norm_const = 2.0 * np.pi * REWARD_STD[0] * REWARD_STD[1]
    return np.exp(-0.5 * (z_p ** 2 + z_v ** 2)) / norm_const


@dataclass
class TransitionSamples:
    """(pos, vel, action) inputs with observed next states and time stamps."""

    inputs: np.ndarray    # (n, 3)
    next_pos: np.ndarray  # (n,)
    next_vel: np.ndarray  # (n,)
    times: np.ndarray     # (n,) strictly increasing stamps


def _sample_transitions(envs, times, rng) -> TransitionSamples:
    n = len(times)
    pos = rng.uniform(POS_MIN, POS_MAX, size=n)
    vel = rng.uniform(VEL_MIN, VEL_MAX, size=n)
    act = rng.uniform(-1.0, 1.0, size=n)
    nxt = [step(CarState(p, v), a, e)
           for p, v, a, e in zip(pos, vel, act, envs)]
    return TransitionSamples(
        inputs=np.column_stack([pos, vel, act]),
        next_pos=np.array([s.pos for s in nxt]),
        next_vel=np.array([s.vel for s in nxt]),
        times=np.asarray(times, dtype=int),
    )


def collect_source_samples(config: RlConfig, rng) -> list:
    """One stationary sample set per historical environment."""
    out = []
    for P, G in SOURCE_ENVS:
        env = EnvSpec(P, G)
        times = np.arange(1, config.source_count + 1)
        out.append(_sample_transitions([env] * config.source_count, times, rng))
    return out


def collect_target_samples(config: RlConfig, rng) -> TransitionSamples:
    """Target run: the environment switches between the two sample blocks."""
    n_before, n_after = config.target_counts
    envs = ([EnvSpec(*TARGET_ENV_BEFORE)] * n_before
            + [EnvSpec(*TARGET_ENV_AFTER)] * n_after)
    times = np.arange(1, n_before + n_after + 1)
    return _sample_transitions(envs, times, rng)


# ---------------------------------------------------------------------------
# Transition models
# ---------------------------------------------------------------------------

@dataclass
class _Standardizer:
    """Z-score map fitted on the pooled samples; kernels then operate on
    unit-scale inputs and outputs."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @staticmethod
    def build(inputs, values):
        xs = np.std(inputs, axis=0)
        ys = float(np.std(values))
        return _Standardizer(np.mean(inputs, axis=0),
                             np.where(xs > 0, xs, 1.0),
                             float(np.mean(values)),
                             ys if ys > 0 else 1.0)

    def x(self, inputs):
        return (np.atleast_2d(inputs) - self.x_mean) / self.x_std

    def y(self, values):
        return (values - self.y_mean) / self.y_std

    def y_inv(self, values):
        return values * self.y_std + self.y_mean


class _CoordModel:
    """Predicts one next-state coordinate from (pos, vel, action).

    Internally models the per-step change of the coordinate (the identity
    part of the transition would otherwise dominate every covariance and
    mask the environment differences between outputs)."""

    def __init__(self, kind, std, predictor, t_last, coord):
        self.kind = kind
        self.std = std
        self._predictor = predictor
        self._t_last = t_last
        self._coord = coord

    def predict_mean(self, inputs) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        X = self.std.x(inputs)
        if self.kind == "GP":
            series, gp = self._predictor
            K_star = _se_kernel(series.inputs, X, gp.amp, gp.ls)
            means = K_star.T @ self._gp_alpha
        elif self.kind == "MGP":
            pred, alpha, theta = self._predictor
            means, _ = pred.predict_many(X, -1, alpha, theta)
        else:
            pred = self._predictor
            a_star, th_star = pred.params_at(self._t_last)
            means, _ = pred.predict_many(X, self._t_last, a_star, th_star)
        return inputs[:, self._coord] + self.std.y_inv(means)


def _fit_coord(kind, sources, target, coord, ss_config, fit_config):
    """Build a model of one state coordinate's transition."""
    def values_of(samples):
        nxt = samples.next_pos if coord == 0 else samples.next_vel
        return nxt - samples.inputs[:, coord]

    all_inputs = np.vstack([s.inputs for s in sources] + [target.inputs])
    all_values = np.concatenate([values_of(s) for s in sources]
                                + [values_of(target)])
    std = _Standardizer.build(all_inputs, all_values)
    t_last = int(target.times[-1])

    tgt_series = OutputSeries(len(sources), target.times,
                              std.x(target.inputs), std.y(values_of(target)))
    if kind == "GP":
        gp = gp_fit(tgt_series, seed=fit_config.seed)
        K = _se_kernel(tgt_series.inputs, tgt_series.inputs, gp.amp, gp.ls)
        K[np.diag_indices_from(K)] += gp.noise ** 2 + 1e-8
        L = cholesky(K, lower=True)
        model = _CoordModel("GP", std, (tgt_series, gp), t_last, coord)
        model._gp_alpha = cho_solve((L, True), tgt_series.values)
        return model

    src_series = [OutputSeries(i, s.times, std.x(s.inputs),
                               std.y(values_of(s)))
                  for i, s in enumerate(sources)]
    dataset = Dataset(sources=src_series, target=tgt_series)
    if kind == "MGP":
        sp = mgp_l1_fit(dataset, 0.0, iters=fit_config.k_in,
                        seed=fit_config.seed)
        from .inference import FitResult
        from .model import GammaPosterior
        dyn = sp.expand(dataset)
        fr = FitResult(params=dyn, gamma=GammaPosterior(
            np.ones((dataset.m, max(tgt_series.n - 1, 1)))))
        pred = Predictor(fr, dataset, ss_config)
        return _CoordModel("MGP", std,
                           (pred, softplus(sp.target_amp_u),
                            softplus(sp.target_ls_u)), t_last, coord)

    if kind != "DMGP-SS":
        raise ValueError(f"unknown transition model kind {kind!r}")
    cfg = replace(fit_config, static_sources=True)
    res = fit(dataset, ss_config, cfg)
    pred = Predictor(res, dataset, ss_config)
    model = _CoordModel("DMGP-SS", std, pred, t_last, coord)
    model.fit_result = res
    return model


@dataclass
class TransitionModel:
    """Two coordinate models sharing one sample standardization scheme."""

    pos_model: _CoordModel
    vel_model: _CoordModel

    def predict_mean(self, inputs) -> np.ndarray:
        """Mean next state for rows of (pos, vel, action); clipped to the
        state box like the true dynamics."""
        pos = np.clip(self.pos_model.predict_mean(inputs), POS_MIN, POS_MAX)
        vel = np.clip(self.vel_model.predict_mean(inputs), VEL_MIN, VEL_MAX)
        return np.column_stack([pos, vel])


def fit_transition(sources, target, kind="DMGP-SS",
                   ss_config: SpikeSlabConfig | None = None,
                   fit_config: FitConfig | None = None) -> TransitionModel:
    """Fit position and velocity transition models of the requested kind."""
    if ss_config is None:
        ss_config = SpikeSlabConfig(nu0=0.02, slab=HardSlab(0.1), eta=0.5)
    if fit_config is None:
        fit_config = FitConfig(k_in=600, adam_step=0.03, batches=1)
    return TransitionModel(
        pos_model=_fit_coord(kind, sources, target, 0, ss_config, fit_config),
        vel_model=_fit_coord(kind, sources, target, 1, ss_config, fit_config),
    )


# ---------------------------------------------------------------------------
# Value iteration on support points
# ---------------------------------------------------------------------------

class _ValueGP:
    """Smoothing GP over the fixed support grid: kernel scales fixed at one
    grid spacing per dimension, a nugget for regularization, and predictions
    clamped to the feasible value range so repeated backups stay stable."""

    def __init__(self, support, nugget, v_bound):
        self.support = support
        self.v_bound = v_bound
        span = support.max(axis=0) - support.min(axis=0)
        side = int(round(np.sqrt(len(support))))
        self.ls = span / max(side - 1, 1)
        K = _se_kernel(support, support, 1.0, self.ls)
        K[np.diag_indices_from(K)] += nugget
        self._L = cholesky(K, lower=True)
        self._weights = None

    def refit(self, values):
        self._weights = cho_solve((self._L, True), values)

    def predict(self, states):
        ks = _se_kernel(self.support, np.atleast_2d(states), 1.0, self.ls)
        return np.clip(ks.T @ self._weights, 0.0, self.v_bound)

    def predict_with_cross(self, ks):
        """Predict from a precomputed support-to-query kernel matrix."""
        return np.clip(ks.T @ self._weights, 0.0, self.v_bound)


@dataclass
class PolicyResult:
    values: np.ndarray       # converged value at the support points
    value_fn: object         # interpolator with .predict(states)
    transition: TransitionModel
    config: RlConfig
    sweeps: int = 0
    converged: bool = False

    def act(self, state) -> float:
        """Greedy one-step lookahead action at a single state."""
        actions = self.config.action_grid
        s = np.asarray([state.pos, state.vel]) if isinstance(state, CarState) \
            else np.asarray(state, dtype=float)
        X = np.column_stack([np.tile(s, (len(actions), 1)), actions])
        nxt = self.transition.predict_mean(X)
        scores = reward(nxt) + self.config.discount * self.value_fn.predict(nxt)
        return float(actions[int(np.argmax(scores))])


def policy_iterate(transition: TransitionModel,
                   config: RlConfig) -> PolicyResult:
    """Value iteration with one-step mean-transition lookahead."""
    support = config.support_points
    actions = config.action_grid
    n_s, n_a = len(support), len(actions)
    X = np.column_stack([np.repeat(support, n_a, axis=0),
                         np.tile(actions, n_s)])
    nxt = transition.predict_mean(X)
    r_next = reward(nxt)

    r_max = float(reward([[GOAL_POS, GOAL_VEL]])[0])
    v_bound = r_max / (1.0 - config.discount)
    vgp = _ValueGP(support, config.value_nugget, v_bound)
    ks_next = _se_kernel(support, nxt, 1.0, vgp.ls)
    V = reward(support)
    converged = False
    sweep = 0
    for sweep in range(1, config.max_sweeps + 1):
        vgp.refit(V)
        backed = r_next + config.discount * vgp.predict_with_cross(ks_next)
        V_new = np.clip(backed.reshape(n_s, n_a).max(axis=1), 0.0, v_bound)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta < config.v_tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"value iteration did not converge in "
                      f"{config.max_sweeps} sweeps")
    vgp.refit(V)
    return PolicyResult(values=V, value_fn=vgp, transition=transition,
                        config=config, sweeps=sweep, converged=converged)


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------

def rollout(policy, env: EnvSpec, config: RlConfig, s_init: CarState,
            steps: int | None = None):
    """Run the policy under the true dynamics.

    policy: callable state -> action (PolicyResult.act works directly).
    Returns (trajectory rows [(step, pos, vel, action, reward)], mean
    absolute distance of the position to the goal).
    """
    if steps is None:
        steps = config.max_steps
    state = s_init
    rows = []
    dists = []
    for k in range(steps):
        action = float(np.clip(policy(state), -1.0, 1.0))
        state = step(state, action, env)
        r = float(reward([[state.pos, state.vel]])[0])
        rows.append((k + 1, state.pos, state.vel, action, r))
        dists.append(abs(state.pos - GOAL_POS))
    return rows, float(np.mean(dists))


def null_policy(_state) -> float:
    return 0.0


def write_trajectory_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "pos", "vel", "action", "reward"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def run_rl(kind="DMGP-SS", config: RlConfig | None = None,
           ss_config: SpikeSlabConfig | None = None,
           fit_config: FitConfig | None = None, seed: int | None = None):
    """Full offline pipeline: sample, fit transitions, iterate, roll out.

    Returns (PolicyResult, trajectory rows, mean absolute distance).
    """
    if config is None:
        config = RlConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    rng = np.random.default_rng(config.seed)
    sources = collect_source_samples(config, rng)
    target = collect_target_samples(config, rng)
    if fit_config is None:
        fit_config = FitConfig(k_in=600, adam_step=0.03, batches=1,
                               seed=config.seed)
    transition = fit_transition(sources, target, kind=kind,
                                ss_config=ss_config, fit_config=fit_config)
    policy = policy_iterate(transition, config)
    s_init = CarState(pos=float(rng.uniform(-0.6, -0.5)), vel=0.0)
    rows, dist = rollout(policy.act, EnvSpec(*TARGET_ENV_AFTER), config,
                         s_init)
    return policy, rows, dist
