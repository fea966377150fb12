"""Replay storage, rotation augmentation, and the two RL trainers.

Transitions can be stored as-is or augmented with their 90/180/270-degree
clockwise rotations: rotating the state images, mapping the action through the
same rotation, and keeping reward and terminal flag untouched. Rotating a
transition yields another physically valid transition because the dynamics
have no preferred compass direction.

The value learner regresses Q(s, a) onto r + gamma * max_a' Q_target(s', a')
with a mean-squared loss. The continuous learner trains a critic against
r + gamma * Q_target(s', actor_target(s')) and improves the actor by ascending
the critic: the loss -mean(Q(s, actor(s))) is differentiated through the
critic's action input. Target networks are hard-copied from the online ones
every ``sync_every`` optimization steps exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import neural
from .neural import Adam, Network, hard_copy

DISCRETE_4 = "discrete4"
DISCRETE_8 = "discrete8"
CONTINUOUS = "continuous"

# action index permutations under one clockwise quarter turn
ROT_4 = np.array([3, 2, 0, 1])           # up right, down left, left up, right down
ROT_8 = np.array([2, 3, 1, 0, 6, 4, 7, 5])  # N E, S W, E S, W N, NE SE, NW NE, SE SW, SW NW


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: object            # int index or float velocity pair
    reward: float
    next_state: np.ndarray
    terminal: bool


def rotate_state(state: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate an (H, W, C) image clockwise by 90-degree steps."""
    return np.rot90(state, k=-(quarter_turns % 4), axes=(0, 1)).copy()


def rotate_action(action, quarter_turns: int, space: str):
    q = quarter_turns % 4
    if space == CONTINUOUS:
        vlon, vlat = float(action[0]), float(action[1])
        for _ in range(q):
            vlon, vlat = vlat, -vlon
        return np.array([vlon, vlat])
    perm = ROT_4 if space == DISCRETE_4 else ROT_8
    idx = int(action)
    for _ in range(q):
        idx = int(perm[idx])
    return idx


def rotate_transition(t: Transition, quarter_turns: int, space: str) -> Transition:
    return Transition(
        state=rotate_state(t.state, quarter_turns),
        action=rotate_action(t.action, quarter_turns, space),
        reward=t.reward,
        next_state=rotate_state(t.next_state, quarter_turns),
        terminal=t.terminal,
    )


class ReplayBuffer:
    """FIFO ring of transitions with uniform with-replacement sampling.

    States are binary images by construction, so they are bit-packed in
    storage; sampled batches come back as float32 arrays.
    """

    def __init__(self, capacity: int, state_shape: Sequence[int], space: str):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_shape = tuple(state_shape)
        self.space = space
        self._bits = int(np.prod(self.state_shape))
        self._packed = (self._bits + 7) // 8
        self._states = np.zeros((self.capacity, self._packed), dtype=np.uint8)
        self._next_states = np.zeros((self.capacity, self._packed), dtype=np.uint8)
        if space == CONTINUOUS:
            self._actions = np.zeros((self.capacity, 2), dtype=np.float64)
        else:
            self._actions = np.zeros(self.capacity, dtype=np.int16)
        self._rewards = np.zeros(self.capacity, dtype=np.float64)
        self._terminals = np.zeros(self.capacity, dtype=bool)
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def _pack(self, state: np.ndarray) -> np.ndarray:
        arr = np.asarray(state)
        if arr.shape != self.state_shape:
            raise ValueError(f"state shape {arr.shape} != {self.state_shape}")
        return np.packbits(arr.reshape(-1) > 0.5)

    def _unpack(self, packed: np.ndarray) -> np.ndarray:
        flat = np.unpackbits(packed, axis=-1, count=self._bits)
        return flat.reshape(packed.shape[:-1] + self.state_shape).astype(np.float32)

    def append(self, t: Transition) -> None:
        i = self._head
        self._states[i] = self._pack(t.state)
        self._next_states[i] = self._pack(t.next_state)
        if self.space == CONTINUOUS:
            self._actions[i] = np.asarray(t.action, dtype=np.float64)
        else:
            self._actions[i] = int(t.action)
        self._rewards[i] = float(t.reward)
        self._terminals[i] = bool(t.terminal)
        self._head = (self._head + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "states": self._unpack(self._states[idx]),
            "actions": self._actions[idx].copy(),
            "rewards": self._rewards[idx].copy(),
            "next_states": self._unpack(self._next_states[idx]),
            "terminals": self._terminals[idx].copy(),
        }


def store_with_sar(buffer: ReplayBuffer, t: Transition, space: str,
                   rotations: int = 3) -> int:
    """Store a transition plus its cumulative quarter-turn rotations."""
    buffer.append(t)
    current = t
    for _ in range(rotations):
        current = rotate_transition(current, 1, space)
        buffer.append(current)
    return 1 + rotations


def exploration_rate(plan_number: int, horizon: int = 20_000) -> float:
    """Linear decay from 1.0 to the 0.1 floor across the exploration horizon."""
    return max(0.1, 1.0 - plan_number / horizon * 0.9)


def sync_targets(pairs: Sequence[Tuple[Network, Network]], step_count: int,
                 every: int = 200) -> bool:
    """Hard-copy online nets onto targets when step_count hits a multiple."""
    if step_count % every != 0:
        return False
    for online, target in pairs:
        hard_copy(online, target)
    return True


class OUNoise:
    """Mean-reverting exploration noise: x += theta*(mu - x) + sigma*gauss."""

    def __init__(self, dim: int = 2, theta: float = 0.15, sigma: float = 0.2,
                 mu: float = 0.0):
        self.dim = dim
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self.reset()

    def reset(self) -> None:
        self.state = np.full(self.dim, self.mu, dtype=np.float64)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        self.state = (self.state + self.theta * (self.mu - self.state)
                      + self.sigma * rng.standard_normal(self.dim))
        return self.state.copy()


@dataclass
class DqnConfig:
    n_actions: int
    state_shape: Tuple[int, ...]
    space: str
    sar: bool = False
    gamma: float = 0.99
    batch_size: int = 32
    lr: float = 1e-3
    sync_every: int = 200
    buffer_capacity: int = 100_000
    explore_horizon: int = 20_000


class DqnAgent:
    def __init__(self, config: DqnConfig, net: Network,
                 buffer: Optional[ReplayBuffer] = None):
        self.config = config
        self.q = net
        self.q_target = net.clone()
        self.opt = Adam(lr=config.lr)
        self.buffer = buffer or ReplayBuffer(config.buffer_capacity,
                                             config.state_shape, config.space)
        self.train_steps = 0

    def select(self, state: np.ndarray, plan_number: int,
               rng: np.random.Generator, greedy: bool = False) -> int:
        if not greedy:
            eps = exploration_rate(plan_number, self.config.explore_horizon)
            if rng.random() < eps:
                return int(rng.integers(self.config.n_actions))
        return int(np.argmax(self.q.forward(state)))

    def observe(self, t: Transition) -> None:
        if self.config.sar:
            store_with_sar(self.buffer, t, self.config.space)
        else:
            self.buffer.append(t)

    def train_step(self, rng: np.random.Generator) -> float:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            raise ValueError("buffer smaller than one batch")
        batch = self.buffer.sample(cfg.batch_size, rng)
        next_q = self.q_target.forward(batch["next_states"])
        best_next = next_q.max(axis=1)
        y = batch["rewards"] + cfg.gamma * best_next * (~batch["terminals"])
        out, cache = self.q.forward_cached(batch["states"])
        rows = np.arange(cfg.batch_size)
        actions = batch["actions"].astype(int)
        q_sa = out[rows, actions]
        err = q_sa - y
        loss = float(np.mean(err ** 2))
        dout = np.zeros_like(out)
        dout[rows, actions] = 2.0 * err / cfg.batch_size
        grads, _ = self.q.backward(cache, dout)
        self.opt.step(self.q.params, grads)
        self.train_steps += 1
        sync_targets([(self.q, self.q_target)], self.train_steps, cfg.sync_every)
        return loss

    def checkpoint_networks(self) -> Dict[str, Network]:
        return {"q": self.q}

    def restore(self, nets) -> None:
        digest, arrays = nets["q"]
        neural.restore_network(self.q, digest, arrays)
        hard_copy(self.q, self.q_target)


@dataclass
class DdpgConfig:
    state_shape: Tuple[int, ...]
    max_velocity: float = 0.001
    sar: bool = False
    gamma: float = 0.99
    batch_size: int = 32
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    sync_every: int = 200
    buffer_capacity: int = 100_000
    noise_kind: str = "ou"      # "ou" or "gaussian"
    ou_theta: float = 0.15
    ou_sigma_scale: float = 0.2  # sigma = scale * max_velocity


class DdpgAgent:
    def __init__(self, config: DdpgConfig, actor: Network, critic: Network,
                 buffer: Optional[ReplayBuffer] = None):
        self.config = config
        self.actor = actor
        self.critic = critic
        self.actor_target = actor.clone()
        self.critic_target = critic.clone()
        self.actor_opt = Adam(lr=config.actor_lr)
        self.critic_opt = Adam(lr=config.critic_lr)
        self.buffer = buffer or ReplayBuffer(config.buffer_capacity,
                                             config.state_shape, CONTINUOUS)
        self.noise = OUNoise(dim=2, theta=config.ou_theta,
                             sigma=config.ou_sigma_scale * config.max_velocity)
        self.train_steps = 0

    def reset_noise(self) -> None:
        self.noise.reset()

    def select(self, state: np.ndarray, rng: np.random.Generator,
               greedy: bool = False) -> np.ndarray:
        action = np.asarray(self.actor.forward(state), dtype=np.float64)
        if not greedy:
            if self.config.noise_kind == "gaussian":
                action = action + rng.standard_normal(2)
            else:
                action = action + self.noise.sample(rng)
        vmax = self.config.max_velocity
        return np.clip(action, -vmax, vmax)

    def observe(self, t: Transition) -> None:
        if self.config.sar:
            store_with_sar(self.buffer, t, CONTINUOUS)
        else:
            self.buffer.append(t)

    def _critic_q_and_dqda(self, states: np.ndarray, actions: np.ndarray):
        """Critic value and its gradient w.r.t. the action input, per sample."""
        q, cache = self.critic.forward_cached(states, actions)
        dqda = self.critic.backward_aux(cache, np.ones_like(q))
        return q[:, 0], dqda

    def train_step(self, rng: np.random.Generator) -> Tuple[float, float]:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            raise ValueError("buffer smaller than one batch")
        batch = self.buffer.sample(cfg.batch_size, rng)

        next_actions = self.actor_target.forward(batch["next_states"])
        next_q = self.critic_target.forward(batch["next_states"], next_actions)[:, 0]
        y = batch["rewards"] + cfg.gamma * next_q * (~batch["terminals"])

        # One critic trunk pass feeds both heads; both updates are computed
        # from the step-start parameters and applied together.
        feat, trunk_cache = self.critic.forward_trunk(batch["states"])
        q, cache = self.critic.forward_head_cached(feat, batch["actions"],
                                                   trunk_cache)
        err = q[:, 0] - y
        critic_loss = float(np.mean(err ** 2))
        dq = (2.0 * err / cfg.batch_size)[:, None]
        grads, _ = self.critic.backward(cache, dq)

        pi, actor_cache = self.actor.forward_cached(batch["states"])
        q_pi, pi_cache = self.critic.forward_head_cached(feat, pi, trunk_cache)
        actor_loss = float(-np.mean(q_pi[:, 0]))
        dqda = self.critic.backward_aux(pi_cache, np.ones_like(q_pi))
        dpi = -dqda / cfg.batch_size
        actor_grads, _ = self.actor.backward(actor_cache, dpi)

        self.critic_opt.step(self.critic.params, grads)
        self.actor_opt.step(self.actor.params, actor_grads)

        self.train_steps += 1
        sync_targets([(self.actor, self.actor_target),
                      (self.critic, self.critic_target)],
                     self.train_steps, cfg.sync_every)
        return critic_loss, actor_loss

    def checkpoint_networks(self) -> Dict[str, Network]:
        return {"actor": self.actor, "critic": self.critic}

    def restore(self, nets) -> None:
        a_digest, a_arrays = nets["actor"]
        c_digest, c_arrays = nets["critic"]
        neural.restore_network(self.actor, a_digest, a_arrays)
        neural.restore_network(self.critic, c_digest, c_arrays)
        hard_copy(self.actor, self.actor_target)
        hard_copy(self.critic, self.critic_target)
