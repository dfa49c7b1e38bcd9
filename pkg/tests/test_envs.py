import math

import numpy as np
import pytest

from metarl.envs import (
    CartPoleSpec,
    CartPoleState,
    EnvConfigError,
    EnvDistribution,
    GridObject,
    GridState,
    GridworldSpec,
    distributions_disjoint,
    env_reset,
    env_step,
    sample_env,
)


def test_sample_env_deterministic():
    d = EnvDistribution.grid_id()
    assert sample_env(d, 5) == sample_env(d, 5)


def test_grid_id_ranges_over_1000_samples():
    d = EnvDistribution.grid_id()
    g = np.random.default_rng(0)
    for _ in range(1000):
        env = sample_env(d, g)
        assert 5 <= env.grid_size <= 9
        assert 2 <= len(env.objects) <= 4
        assert all(o.reward in (-1.0, 1.0) for o in env.objects)
        assert any(o.reward > 0 for o in env.objects)
        assert len({o.position for o in env.objects}) == len(env.objects)


def test_infeasible_object_count():
    with pytest.raises(EnvConfigError):
        sample_env(EnvDistribution.grid_id(size_range=(2, 2), n_objects_range=(4, 4)), 0)


def test_id_ood_disjoint():
    assert distributions_disjoint(EnvDistribution.grid_id(), EnvDistribution.grid_ood())


def test_grid_reset_observation_counts():
    env = sample_env(EnvDistribution.grid_id(), 3)
    state, obs = env_reset(env, 0)
    assert state.step == 0
    assert obs.sum() == 1 + len(env.objects)
    assert np.array_equal(env_reset(env, 0)[1], obs)


def test_cartpole_reset_bounds():
    for s in range(20):
        state, obs = env_reset(CartPoleSpec(), s)
        assert np.all(np.abs(obs) <= 0.05)


def _corridor(terminal=True, cap=50):
    return GridworldSpec(3, (GridObject((0, 1), 1.0, terminal),), cap, (0, 0))


def test_step_onto_terminal_reward():
    env = _corridor()
    state, _ = env_reset(env, 0)
    state, _, reward, done = env_step(env, state, 1, 0)
    assert reward == 1.0 and done


def test_walls_absorb():
    env = _corridor()
    state, _ = env_reset(env, 0)
    state, _, reward, done = env_step(env, state, 0, 0)  # north from the top row
    assert state.agent == (0, 0) and reward == 0.0 and not done


def test_step_cap():
    env = _corridor(cap=3)
    state, _ = env_reset(env, 0)
    for i in range(3):
        state, _, _, done = env_step(env, state, 3, 0)
    assert done and state.step == 3


def test_bad_actions():
    with pytest.raises(ValueError):
        env_step(_corridor(), env_reset(_corridor(), 0)[0], 4, 0)
    with pytest.raises(ValueError):
        env_step(CartPoleSpec(), env_reset(CartPoleSpec(), 0)[0], 2, 0)


def test_cartpole_one_euler_step_by_hand():
    env = CartPoleSpec()
    s = CartPoleState(0.01, 0.0, 0.02, 0.0)
    # hand integration: force +10, total mass 1.1, pm*l = 0.05
    sin_t, cos_t = math.sin(0.02), math.cos(0.02)
    temp = 10.0 / 1.1
    theta_acc = (9.8 * sin_t - cos_t * temp) / (0.5 * (4 / 3 - 0.1 * cos_t**2 / 1.1))
    x_acc = temp - 0.05 * theta_acc * cos_t / 1.1
    new, obs, reward, done = env_step(env, s, 1, 0)
    assert reward == 1.0 and not done
    assert obs[0] == pytest.approx(0.01, abs=1e-15)
    assert obs[1] == pytest.approx(0.02 * x_acc, rel=1e-12)
    assert obs[2] == pytest.approx(0.02, abs=1e-15)
    assert obs[3] == pytest.approx(0.02 * theta_acc, rel=1e-12)


def test_episode_length_bounded_random_policy():
    g = np.random.default_rng(0)
    for i in range(1000):
        env = sample_env(EnvDistribution.grid_id(), g) if i % 2 else CartPoleSpec()
        state, _ = env_reset(env, g)
        n = 0
        done = False
        while not done:
            state, _, r, done = env_step(env, state, int(g.integers(env.n_actions)), g)
            n += 1
            if env.kind == "cartpole":
                assert r == 1.0
            else:
                assert r == 0.0 or r in {o.reward for o in env.objects} or abs(r) <= len(env.objects)
        assert n <= env.max_episode_steps


def test_constant_action_cartpole_falls():
    env = CartPoleSpec()
    state, _ = env_reset(env, 0)
    for n in range(1, 501):
        state, _, _, done = env_step(env, state, 0, 0)
        if done:
            break
    assert n < 500


def test_gridworld_json_round_trip():
    env = sample_env(EnvDistribution.grid_ood(), 11)
    assert GridworldSpec.from_json(env.to_json()) == env


def test_distribution_from_dict():
    assert EnvDistribution.from_dict({"kind": "grid_ood"}) == EnvDistribution.grid_ood()
    with pytest.raises(EnvConfigError):
        EnvDistribution.from_dict({"kind": "atari"})
