"""Simple DQN agent: epsilon-greedy acting, uniform replay, TD(0) updates.

No target network and no optimizer state; one epoch of training is a fixed
number of minibatch SGD steps on the replay buffer.  Rewards are scaled by
``reward_scale`` before entering the TD target so that targets stay inside
the sigmoid output range (with gamma=0.9, scale=0.1 and rewards in {0,1}
every target lies in [0,1)); episode returns are always reported in raw
reward units.

train_offline() returns the summed additive delta applied to the GLOBAL
layer over the epoch, which is what gets broadcast to the other agents.
The buffer never leaves the agent: raw transitions are the privacy
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envs
from .nn import LayerDelta, SplitModel, apply_update, backward, forward


@dataclass(frozen=True)
class AgentHyperparams:
    gamma: float = 0.9
    lr: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay: float = 0.95  # multiplicative, per epoch
    batch_size: int = 32
    train_steps_per_epoch: int = 64
    buffer_capacity: int = 10_000
    reward_scale: float = 0.1  # default (1 - gamma)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.batch_size < 1 or self.train_steps_per_epoch < 0 or self.buffer_capacity < 1:
            raise ValueError("batch_size/buffer_capacity must be >= 1, train steps >= 0")


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float  # raw env reward, unscaled
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with a seeded uniform sampler
    (with replacement)."""

    def __init__(self, capacity: int, seed: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0
        self._rng = np.random.default_rng(seed)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._pos] = transition
            self._pos = (self._pos + 1) % self.capacity

    def sample(self, n: int) -> list[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = self._rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


def select_action(model: SplitModel, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over the model's two Q-outputs; ties go to action 0."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(0, envs.N_ACTIONS))
    q, _ = forward(model, obs)
    return int(np.argmax(q))  # argmax picks the first max, i.e. action 0 on ties


class Agent:
    """One learner: a split model plus its private replay buffer and rng."""

    def __init__(self, name: str, model: SplitModel, hp: AgentHyperparams,
                 buffer_seed: int, action_seed: int):
        self.name = name
        self.model = model
        self.hp = hp
        self.buffer = ReplayBuffer(hp.buffer_capacity, buffer_seed)
        self.rng = np.random.default_rng(action_seed)
        self.epochs_trained = 0

    @property
    def epsilon(self) -> float:
        return max(self.hp.epsilon_end,
                   self.hp.epsilon_start * self.hp.epsilon_decay ** self.epochs_trained)

    def rollout(self, env_config: envs.EnvConfig, env_seed: int
                ) -> tuple[list[Transition], float]:
        """Play one episode to completion, storing every transition in the
        replay buffer. Returns (transitions, sum of raw rewards)."""
        state = envs.reset(env_config, env_seed)
        eps = self.epsilon
        transitions: list[Transition] = []
        episode_return = 0.0
        while not state.done:
            action = select_action(self.model, state.obs, eps, self.rng)
            nxt, reward, done = envs.step(env_config, state, action)
            t = Transition(state.obs, action, reward, nxt.obs, done)
            transitions.append(t)
            self.buffer.push(t)
            episode_return += reward
            state = nxt
        return transitions, episode_return

    def _train_step(self) -> LayerDelta:
        batch = self.buffer.sample(self.hp.batch_size)
        n = len(batch)
        states = np.stack([t.state for t in batch])
        actions = np.array([t.action for t in batch], dtype=np.intp)
        rewards = np.array([t.reward for t in batch])
        next_states = np.stack([t.next_state for t in batch])
        live = np.array([0.0 if t.done else 1.0 for t in batch])

        q_next, _ = forward(self.model, next_states)
        targets = self.hp.reward_scale * rewards + self.hp.gamma * q_next.max(axis=1) * live

        q, tape = forward(self.model, states)
        rows = np.arange(n)
        # squared error on the taken action's output only; other outputs get
        # zero output-grad
        output_grad = np.zeros_like(q)
        output_grad[rows, actions] = (2.0 / n) * (q[rows, actions] - targets)

        bundle = backward(self.model, tape, output_grad, epoch=self.epochs_trained)
        deltas = apply_update(self.model, bundle, self.hp.lr)
        return deltas[self.model.global_layer().layer_id]

    def train_offline(self) -> LayerDelta:
        """One epoch of offline training; returns the summed GLOBAL-layer
        delta for broadcast.  Empty buffer is a no-op with a zero delta.

        Replicas apply the epoch delta as a single addition, so after the
        per-step updates the owner's global layer is rebased onto
        (epoch start + summed delta): every replica must land on identical
        bits.
        """
        gl = self.model.global_layer()
        sum_dw = np.zeros_like(gl.weights)
        sum_db = np.zeros_like(gl.bias)
        if len(self.buffer) > 0 and self.hp.train_steps_per_epoch > 0:
            w_start = gl.weights.copy()
            b_start = gl.bias.copy()
            for _ in range(self.hp.train_steps_per_epoch):
                step_delta = self._train_step()
                sum_dw += step_delta.weights
                sum_db += step_delta.bias
            gl.weights[:] = w_start + sum_dw
            gl.bias[:] = b_start + sum_db
        self.epochs_trained += 1
        return LayerDelta(gl.layer_id, sum_dw, sum_db)
