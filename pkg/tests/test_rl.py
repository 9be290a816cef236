import numpy as np
import pytest

from dynmgp.rl import (GOAL_POS, SOURCE_ENVS, TARGET_ENV_AFTER,
                       TARGET_ENV_BEFORE, CarState, EnvSpec, RlConfig,
                       TransitionModel, collect_source_samples,
                       collect_target_samples, null_policy, policy_iterate,
                       reward, rollout, step, write_trajectory_csv)
from dynmgp.rl import POS_MAX, POS_MIN, VEL_MAX, VEL_MIN, _Standardizer


def test_step_matches_hand_evaluation():
    env = EnvSpec(*TARGET_ENV_AFTER)
    s = step(CarState(pos=-0.5, vel=0.0), 1.0, env)
    vel = 0.0 + 0.0011 * 1.0 - 0.0026 * np.cos(3.0 * -0.5)
    assert s.vel == pytest.approx(vel, abs=1e-12)
    assert s.pos == pytest.approx(-0.5 + vel, abs=1e-12)


def test_step_clips_to_state_box():
    env = EnvSpec(0.2, 1e-6)
    s = step(CarState(pos=0.99, vel=0.06), 1.0, env)
    assert s.vel == VEL_MAX and s.pos == POS_MAX
    s = step(CarState(pos=-1.19, vel=-0.06), -1.0, env)
    assert s.vel == VEL_MIN and s.pos == POS_MIN


def test_reward_peaks_at_goal():
    r_goal = reward([[GOAL_POS, 0.0]])[0]
    r_off = reward([[GOAL_POS - 0.2, 0.0], [GOAL_POS, 0.02]])
    assert (r_goal > r_off).all()
    assert r_goal == pytest.approx(1.0 / (2 * np.pi * 0.05 * 0.0035), rel=1e-12)


def test_environment_constants():
    assert SOURCE_ENVS == ((0.01, 0.0015), (0.001, 0.0025))
    assert TARGET_ENV_BEFORE == (0.009, 0.0015)
    assert TARGET_ENV_AFTER == (0.0011, 0.0026)


def test_sample_collection_shapes():
    cfg = RlConfig(source_count=50, target_counts=(7, 5))
    rng = np.random.default_rng(0)
    sources = collect_source_samples(cfg, rng)
    assert len(sources) == 2
    assert sources[0].inputs.shape == (50, 3)
    assert np.all(np.diff(sources[0].times) > 0)
    target = collect_target_samples(cfg, rng)
    assert target.inputs.shape == (12, 3)
    # every recorded next state obeys the true dynamics of its block
    for k in range(12):
        env = EnvSpec(*(TARGET_ENV_BEFORE if k < 7 else TARGET_ENV_AFTER))
        p, v, a = target.inputs[k]
        s = step(CarState(p, v), a, env)
        assert target.next_pos[k] == pytest.approx(s.pos, abs=1e-12)
        assert target.next_vel[k] == pytest.approx(s.vel, abs=1e-12)


def test_standardizer_round_trip():
    rng = np.random.default_rng(1)
    X = rng.normal(2.0, 3.0, size=(40, 3))
    y = rng.normal(-1.0, 0.5, size=40)
    std = _Standardizer.build(X, y)
    assert np.allclose(np.mean(std.x(X), axis=0), 0.0, atol=1e-12)
    assert np.allclose(np.std(std.x(X), axis=0), 1.0, atol=1e-12)
    assert np.allclose(std.y_inv(std.y(y)), y, atol=1e-12)


def test_rl_config_grids():
    cfg = RlConfig(support_side=5, n_actions=3)
    assert np.array_equal(cfg.action_grid, [-1.0, 0.0, 1.0])
    pts = cfg.support_points
    assert pts.shape == (25, 2)
    assert pts[:, 0].min() == POS_MIN and pts[:, 0].max() == POS_MAX


class _TrueTransition:
    """Transition oracle using the real post-change dynamics."""

    def predict_mean(self, X):
        X = np.atleast_2d(X)
        env = EnvSpec(*TARGET_ENV_AFTER)
        nxt = [step(CarState(p, v), a, env) for p, v, a in X]
        return np.array([[s.pos, s.vel] for s in nxt])


def test_null_policy_stays_far_from_goal():
    cfg = RlConfig(max_steps=300)
    rows, dist = rollout(null_policy, EnvSpec(*TARGET_ENV_AFTER), cfg,
                         CarState(-0.55, 0.0))
    assert dist > 0.8
    assert len(rows) == 300


def test_value_iteration_with_true_dynamics_learns_to_climb():
    cfg = RlConfig(support_side=12, max_steps=500, max_sweeps=150)
    policy = policy_iterate(_TrueTransition(), cfg)
    assert np.all(policy.values >= 0)
    r_max = reward([[GOAL_POS, 0.0]])[0]
    assert np.all(policy.values <= r_max / (1 - cfg.discount) + 1e-9)
    # value near the goal must dominate value at the valley bottom
    v_goal = policy.value_fn.predict([[GOAL_POS, 0.0]])[0]
    v_valley = policy.value_fn.predict([[-0.5, 0.0]])[0]
    assert v_goal > v_valley
    rows, dist = rollout(policy.act, EnvSpec(*TARGET_ENV_AFTER), cfg,
                         CarState(-0.55, 0.0))
    assert dist < 0.6
    assert any(abs(r[1] - GOAL_POS) < 0.05 for r in rows)


def test_trajectory_csv(tmp_path):
    rows = [(1, -0.5, 0.01, 1.0, 0.0), (2, -0.49, 0.012, -1.0, 0.1)]
    path = tmp_path / "traj.csv"
    write_trajectory_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,pos,vel,action,reward"
    assert len(lines) == 3
    assert float(lines[1].split(",")[1]) == -0.5
