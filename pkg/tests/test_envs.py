import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsplit.envs import (
    CARTPOLE_DT,
    EnvConfig,
    EnvKind,
    EnvState,
    reset,
    step,
)


def cartpole_oracle(cfg, obs, action):
    """Independent evaluation of the cart-pole update, written directly from
    the equations of motion with plain floats."""
    x, x_dot, th, th_dot = (float(v) for v in obs)
    f = cfg.force_mag if action == 1 else -cfg.force_mag
    mt = cfg.cart_mass + cfg.pole_mass
    ml = cfg.pole_mass * cfg.pole_half_length
    tmp = (f + ml * th_dot ** 2 * math.sin(th)) / mt
    th_acc = (cfg.gravity * math.sin(th) - math.cos(th) * tmp) / (
        cfg.pole_half_length * (4.0 / 3.0 - cfg.pole_mass * math.cos(th) ** 2 / mt))
    x_acc = tmp - ml * th_acc * math.cos(th) / mt
    return [x + CARTPOLE_DT * x_dot,
            x_dot + CARTPOLE_DT * x_acc,
            th + CARTPOLE_DT * th_dot,
            th_dot + CARTPOLE_DT * th_acc]


def mountaincar_oracle(obs, action):
    p, v = float(obs[0]), float(obs[1])
    v += (1.0 if action == 1 else -1.0) * 0.001 - 0.0025 * math.cos(3.0 * p)
    v = max(-0.07, min(0.07, v))
    p += v
    p = max(-1.2, min(0.6, p))
    if p == -1.2 and v < 0.0:
        v = 0.0
    return p, v


# ---------------------------------------------------------------------------
# reset
# ---------------------------------------------------------------------------

def test_reset_is_deterministic():
    cfg = EnvConfig()
    a = reset(cfg, 99)
    b = reset(cfg, 99)
    assert np.array_equal(a.obs, b.obs)
    assert a.step_count == 0 and not a.done


def test_cartpole_reset_bounds_over_many_seeds():
    cfg = EnvConfig()
    for seed in range(1000):
        state = reset(cfg, seed)
        assert np.abs(state.obs).max() <= 0.05


def test_mountaincar_reset_shape_and_range():
    cfg = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD)
    for seed in range(200):
        state = reset(cfg, seed)
        p = state.obs[0]
        assert -0.6 <= p <= -0.4
        assert np.array_equal(state.obs[1:], [0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# cart-pole stepping
# ---------------------------------------------------------------------------

def test_cartpole_one_step_from_zero_state_hand_values():
    cfg = EnvConfig()
    nxt, reward, done = step(cfg, EnvState(np.zeros(4)), 1)
    # hand evaluation at the zero state: temp = 10/1.1, the pole coupling
    # gives theta_acc = -(10/1.1) / (0.5*(4/3 - 0.1/1.1)), etc.
    temp = 10.0 / 1.1
    th_acc = (0.0 - temp) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1))
    x_acc = temp - 0.05 * th_acc / 1.1
    assert nxt.obs[0] == 0.0 and nxt.obs[2] == 0.0
    assert abs(nxt.obs[1] - CARTPOLE_DT * x_acc) < 1e-12
    assert abs(nxt.obs[3] - CARTPOLE_DT * th_acc) < 1e-12
    assert reward == 1.0 and not done


def test_cartpole_matches_oracle_on_random_states():
    rng = np.random.default_rng(17)
    cfg = EnvConfig()
    for _ in range(100):
        obs = rng.uniform([-2.0, -3.0, -0.2, -3.0], [2.0, 3.0, 0.2, 3.0])
        action = int(rng.integers(0, 2))
        nxt, _, _ = step(cfg, EnvState(obs), action)
        expected = cartpole_oracle(cfg, obs, action)
        assert np.max(np.abs(nxt.obs - expected)) < 1e-12


def test_cartpole_oracle_with_nondefault_config():
    cfg = EnvConfig(gravity=12.0, pole_half_length=1.0, pole_mass=0.2, cart_mass=1.5)
    rng = np.random.default_rng(3)
    for _ in range(50):
        obs = rng.uniform(-0.5, 0.5, size=4)
        action = int(rng.integers(0, 2))
        nxt, _, _ = step(cfg, EnvState(obs), action)
        assert np.max(np.abs(nxt.obs - cartpole_oracle(cfg, obs, action))) < 1e-12


def test_cartpole_angle_violation_terminates():
    cfg = EnvConfig()
    tilted = EnvState(np.array([0.0, 0.0, cfg.angle_limit * 0.999, 5.0]))
    nxt, reward, done = step(cfg, tilted, 0)
    assert done and nxt.done
    assert abs(nxt.obs[2]) > cfg.angle_limit
    assert reward == 1.0


def test_cartpole_position_violation_terminates():
    cfg = EnvConfig()
    fast = EnvState(np.array([2.39, 3.0, 0.0, 0.0]))
    nxt, _, done = step(cfg, fast, 1)
    assert done and abs(nxt.obs[0]) > cfg.position_limit


def test_episode_capped_at_max_steps_and_return_equals_steps():
    cfg = EnvConfig(max_steps=50)
    state = reset(cfg, 0)
    rng = np.random.default_rng(0)
    total = 0.0
    steps = 0
    while not state.done:
        state, reward, _ = step(cfg, state, int(rng.integers(0, 2)))
        total += reward
        steps += 1
    assert steps <= 50
    assert total == steps


def test_step_rejects_finished_episode():
    cfg = EnvConfig(max_steps=1)
    state = reset(cfg, 0)
    state, _, done = step(cfg, state, 0)
    assert done
    with pytest.raises(ValueError):
        step(cfg, state, 0)


def test_step_rejects_bad_action():
    cfg = EnvConfig()
    with pytest.raises(ValueError):
        step(cfg, reset(cfg, 0), 2)


def test_trajectory_determinism_bitwise():
    cfg = EnvConfig(gravity=12.0)
    actions = np.random.default_rng(5).integers(0, 2, size=60)

    def play():
        state = reset(cfg, 31)
        trace = [state.obs.copy()]
        for a in actions:
            if state.done:
                break
            state, _, _ = step(cfg, state, int(a))
            trace.append(state.obs.copy())
        return np.vstack(trace)

    assert np.array_equal(play(), play())


# ---------------------------------------------------------------------------
# mountain-car stepping
# ---------------------------------------------------------------------------

def test_mountaincar_matches_oracle():
    cfg = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD)
    rng = np.random.default_rng(23)
    for _ in range(100):
        obs = np.array([rng.uniform(-1.2, 0.6), rng.uniform(-0.07, 0.07), 0.0, 0.0])
        action = int(rng.integers(0, 2))
        nxt, _, _ = step(cfg, EnvState(obs), action)
        p, v = mountaincar_oracle(obs, action)
        assert abs(nxt.obs[0] - p) < 1e-15 and abs(nxt.obs[1] - v) < 1e-15
        assert nxt.obs[2] == 0.0 and nxt.obs[3] == 0.0


def test_mountaincar_goal_gives_reward_and_done():
    cfg = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD)
    near_goal = EnvState(np.array([0.48, 0.05, 0.0, 0.0]))
    nxt, reward, done = step(cfg, near_goal, 1)
    assert nxt.obs[0] >= 0.5
    assert reward == 1.0 and done


def test_mountaincar_episode_without_goal_returns_zero():
    cfg = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD)
    state = reset(cfg, 4)
    total = 0.0
    while not state.done:
        state, reward, _ = step(cfg, state, 0)  # always push left: never climbs out
        total += reward
    assert total == 0.0
    assert state.step_count == cfg.max_steps


def test_mountaincar_left_wall_zeroes_velocity():
    cfg = EnvConfig(kind=EnvKind.MOUNTAINCAR_MOD)
    state = EnvState(np.array([-1.19, -0.07, 0.0, 0.0]))
    nxt, _, _ = step(cfg, state, 0)
    assert nxt.obs[0] == -1.2
    assert nxt.obs[1] == 0.0


def test_observation_and_action_interface_is_uniform():
    for kind in EnvKind:
        cfg = EnvConfig(kind=kind)
        state = reset(cfg, 0)
        assert state.obs.shape == (4,)
        nxt, _, _ = step(cfg, state, 0)
        assert nxt.obs.shape == (4,)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(gravity=0.0), dict(cart_mass=-1.0), dict(pole_half_length=0.0),
    dict(force_mag=-5.0), dict(max_steps=0),
])
def test_config_rejects_nonpositive_quantities(bad):
    with pytest.raises(ValueError):
        EnvConfig(**bad)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 40))
def test_cartpole_step_count_tracks_actions(seed, n):
    cfg = EnvConfig()
    state = reset(cfg, seed)
    rng = np.random.default_rng(seed)
    taken = 0
    for _ in range(n):
        if state.done:
            break
        state, _, _ = step(cfg, state, int(rng.integers(0, 2)))
        taken += 1
    assert state.step_count == taken
