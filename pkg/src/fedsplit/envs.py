"""Seedable classic-control environments: configurable cart-pole and a
two-action mountain-car variant.

Both expose the same interface: a 4-float observation and actions {0, 1},
so agents with identical input/output dims can be dropped into either.
The mountain-car variant pads its 2-float state with zeros and rewards
only goal arrival (+1), so an agent that never climbs out scores 0.

Dynamics are pure functions of (config, state, action); identical seeds
and action sequences reproduce trajectories bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

OBS_DIM = 4
N_ACTIONS = 2

CARTPOLE_DT = 0.02

# mountain-car track constants (fixed, not configurable)
MC_FORCE = 0.001
MC_GRAVITY = 0.0025
MC_MIN_POS = -1.2
MC_MAX_POS = 0.6
MC_MAX_SPEED = 0.07
MC_GOAL_POS = 0.5


class EnvKind(Enum):
    CARTPOLE = "cartpole"
    MOUNTAINCAR_MOD = "mountaincar-mod"


@dataclass(frozen=True)
class EnvConfig:
    kind: EnvKind = EnvKind.CARTPOLE
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_mag: float = 10.0
    max_steps: int = 200
    angle_limit: float = 12.0 * math.pi / 180.0
    position_limit: float = 2.4

    def __post_init__(self) -> None:
        for name in ("gravity", "cart_mass", "pole_mass", "pole_half_length",
                     "force_mag", "angle_limit", "position_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class EnvState:
    obs: np.ndarray  # always 4 floats
    step_count: int = 0
    done: bool = False

    def __post_init__(self) -> None:
        self.obs = np.asarray(self.obs, dtype=np.float64)
        if self.obs.shape != (OBS_DIM,):
            raise ValueError(f"observation must have {OBS_DIM} entries")


def reset(config: EnvConfig, seed: int) -> EnvState:
    """Fresh episode. CartPole draws all four state vars uniform in
    [-0.05, 0.05]; mountain-car draws position in [-0.6, -0.4], velocity 0."""
    rng = np.random.default_rng(seed)
    if config.kind is EnvKind.CARTPOLE:
        obs = rng.uniform(-0.05, 0.05, size=OBS_DIM)
    else:
        obs = np.array([rng.uniform(-0.6, -0.4), 0.0, 0.0, 0.0])
    return EnvState(obs)


def step(config: EnvConfig, state: EnvState, action: int) -> tuple[EnvState, float, bool]:
    """Advance one step; returns (next_state, reward, done). The input state
    is not mutated."""
    if state.done:
        raise ValueError("cannot step a finished episode")
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    if config.kind is EnvKind.CARTPOLE:
        return _step_cartpole(config, state, action)
    return _step_mountaincar(config, state, action)


def _step_cartpole(config: EnvConfig, state: EnvState, action: int
                   ) -> tuple[EnvState, float, bool]:
    x, x_dot, theta, theta_dot = (float(v) for v in state.obs)
    force = config.force_mag if action == 1 else -config.force_mag
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    total_mass = config.cart_mass + config.pole_mass
    pole_mass_length = config.pole_mass * config.pole_half_length

    temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (config.gravity * sin_t - cos_t * temp) / (
        config.pole_half_length * (4.0 / 3.0 - config.pole_mass * cos_t * cos_t / total_mass))
    x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass

    # explicit Euler: positions advance with the old velocities
    x = x + CARTPOLE_DT * x_dot
    x_dot = x_dot + CARTPOLE_DT * x_acc
    theta = theta + CARTPOLE_DT * theta_dot
    theta_dot = theta_dot + CARTPOLE_DT * theta_acc

    steps = state.step_count + 1
    done = (abs(theta) > config.angle_limit
            or abs(x) > config.position_limit
            or steps >= config.max_steps)
    nxt = EnvState(np.array([x, x_dot, theta, theta_dot]), steps, done)
    return nxt, 1.0, done


def _step_mountaincar(config: EnvConfig, state: EnvState, action: int
                      ) -> tuple[EnvState, float, bool]:
    position = float(state.obs[0])
    velocity = float(state.obs[1])
    # two actions only: 0 pushes left, 1 pushes right (no-op removed)
    force_dir = 1.0 if action == 1 else -1.0

    velocity += force_dir * MC_FORCE + math.cos(3.0 * position) * (-MC_GRAVITY)
    velocity = min(max(velocity, -MC_MAX_SPEED), MC_MAX_SPEED)
    position += velocity
    position = min(max(position, MC_MIN_POS), MC_MAX_POS)
    if position == MC_MIN_POS and velocity < 0.0:
        velocity = 0.0

    steps = state.step_count + 1
    at_goal = position >= MC_GOAL_POS
    reward = 1.0 if at_goal else 0.0
    done = at_goal or steps >= config.max_steps
    nxt = EnvState(np.array([position, velocity, 0.0, 0.0]), steps, done)
    return nxt, reward, done
