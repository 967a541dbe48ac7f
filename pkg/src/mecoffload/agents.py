"""Per-server offloading policies: DQN agent and greedy/random baselines.

Every policy picks a *slot index* into the server's pool (ascending user id);
slots beyond the pool size are masked out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import neural
from .sim import UserFeatures

FEATURES_PER_SLOT = 4
QUEUE_SCALE = 100.0
ENERGY_SCALE = 1.0
WAIT_SCALE = 100.0
SNR_DB_SCALE = 100.0

REWARD_TRANSFORMS = ("clip", "log1p", "none")


def encode_observation(records: list[UserFeatures], slots: int) -> tuple[np.ndarray, np.ndarray]:
    """Flatten raw pool features into a fixed-width vector in [0, 1] and a validity mask."""
    if len(records) > slots:
        raise ValueError(f"pool of {len(records)} users does not fit {slots} slots")
    obs = np.zeros(slots * FEATURES_PER_SLOT)
    mask = np.zeros(slots, dtype=bool)
    for s, r in enumerate(records):
        base = s * FEATURES_PER_SLOT
        obs[base] = r.queue_length / QUEUE_SCALE
        obs[base + 1] = r.energy / ENERGY_SCALE
        obs[base + 2] = r.mean_wait / WAIT_SCALE
        obs[base + 3] = r.uplink_snr_db / SNR_DB_SCALE if math.isfinite(r.uplink_snr_db) else 0.0
        mask[s] = True
    np.clip(obs, 0.0, 1.0, out=obs)
    return obs, mask


def masked_argmax(values, mask) -> int:
    """Index of the largest value among valid entries; ties go to the lowest index."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no valid action")
    v = np.where(mask, np.asarray(values, dtype=np.float64), -np.inf)
    return int(np.argmax(v))


def random_select(mask, rng: np.random.Generator) -> int:
    valid = np.flatnonzero(np.asarray(mask, dtype=bool))
    if valid.size == 0:
        raise ValueError("no valid action")
    return int(valid[rng.integers(valid.size)])


def time_greedy_select(records: list[UserFeatures]) -> int:
    """Slot of the user whose queued tasks have waited longest on average."""
    if not records:
        raise ValueError("empty pool")
    return masked_argmax([r.mean_wait for r in records], [True] * len(records))


def energy_greedy_select(records: list[UserFeatures]) -> int:
    """Slot of the user with the least remaining energy."""
    if not records:
        raise ValueError("empty pool")
    return masked_argmax([-r.energy for r in records], [True] * len(records))


# ----------------------------------------------------------------------------
# exploration schedule


@dataclass(frozen=True)
class EpsilonSchedule:
    pretrain_episodes: int = 100
    decay_steps: int = 10_000
    start: float = 1.0
    end: float = 0.01


def epsilon_value(schedule: EpsilonSchedule, episode: int, step: int) -> float:
    """Exploration rate; ``step`` counts environment intervals since pretraining ended."""
    if episode < schedule.pretrain_episodes:
        return schedule.start
    if step >= schedule.decay_steps:
        return schedule.end
    frac = step / schedule.decay_steps
    return schedule.start + frac * (schedule.end - schedule.start)


# ----------------------------------------------------------------------------
# replay


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, obs_dim: int, num_actions: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.next_mask = np.zeros((self.capacity, num_actions), dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, obs, action, reward, next_obs, terminal, next_mask) -> None:
        i = self.inserted % self.capacity
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = terminal
        self.next_mask[i] = next_mask
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform sample with replacement."""
        idx = rng.integers(0, len(self), size=batch_size)
        return {
            "obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx], "terminal": self.terminal[idx],
            "next_mask": self.next_mask[idx],
        }

    def ordered(self) -> dict[str, np.ndarray]:
        """Contents oldest-first."""
        n = len(self)
        start = self.inserted % self.capacity if self.inserted > self.capacity else 0
        idx = (start + np.arange(n)) % self.capacity
        return {"obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
                "next_obs": self.next_obs[idx], "terminal": self.terminal[idx],
                "next_mask": self.next_mask[idx]}


def bellman_targets(batch: dict, network: neural.Mlp, gamma: float) -> np.ndarray:
    """r + gamma * max over valid next actions of Q(s', a'); just r at terminal steps."""
    rewards = np.asarray(batch["rewards"], dtype=np.float64)
    if gamma == 0.0:
        return rewards.copy()
    q_next = neural.forward(network, batch["next_obs"])
    q_next = np.where(batch["next_mask"], q_next, -np.inf).max(axis=1)
    bootstrap = np.where(batch["terminal"], 0.0, q_next)
    return rewards + gamma * bootstrap


# ----------------------------------------------------------------------------
# DQN agent


@dataclass(frozen=True)
class DqnSettings:
    hidden: tuple[int, ...] = (200, 200)
    gamma: float = 0.9
    batch_size: int = 64
    buffer_capacity: int = 100_000
    learning_rate: float = 5e-3
    # copy online weights to a frozen target net every n updates; 0 disables it
    target_sync_updates: int = 0
    reward_transform: str = "log1p"
    reward_clip: float = 10.0


class DqnAgent:
    def __init__(self, obs_dim: int, num_actions: int, settings: DqnSettings | None = None,
                 seed: int = 0, schedule: EpsilonSchedule | None = None):
        self.settings = settings or DqnSettings()
        if self.settings.reward_transform not in REWARD_TRANSFORMS:
            raise ValueError(f"reward_transform must be one of {REWARD_TRANSFORMS}")
        self.schedule = schedule or EpsilonSchedule()
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        seeds = np.random.SeedSequence(seed).spawn(3)
        self.network = neural.init(
            (obs_dim, *self.settings.hidden, num_actions), int(seeds[0].generate_state(1)[0])
        )
        self.optimizer = neural.OptimizerState.for_network(self.network, self.settings.learning_rate)
        self.target = self.network.copy() if self.settings.target_sync_updates else None
        self.buffer = ReplayBuffer(self.settings.buffer_capacity, obs_dim, num_actions)
        self.explore_rng = np.random.Generator(np.random.PCG64(seeds[1]))
        self.sample_rng = np.random.Generator(np.random.PCG64(seeds[2]))
        self.episode = 0
        self.global_step = 0  # intervals after pretraining

    def q_values(self, obs) -> np.ndarray:
        return neural.forward(self.network, obs)[0]

    def learning_reward(self, reward: float) -> float:
        kind = self.settings.reward_transform
        if kind == "clip":
            return min(reward, self.settings.reward_clip)
        if kind == "log1p":
            return math.log1p(reward)
        return reward

    def remember(self, obs, action, reward, next_obs, terminal, next_mask) -> None:
        self.buffer.add(obs, action, self.learning_reward(reward), next_obs, terminal, next_mask)

    def act(self, obs, mask, epsilon: float) -> int:
        return select_action(self, obs, mask, epsilon, self.explore_rng)

    def update(self, learning_rate: float | None = None, rng: np.random.Generator | None = None):
        """One minibatch gradient step; returns the batch MSE, or None if the buffer is short."""
        s = self.settings
        if len(self.buffer) < s.batch_size:
            return None
        batch = self.buffer.sample(s.batch_size, rng if rng is not None else self.sample_rng)
        # divergence is detected explicitly below
        with np.errstate(over="ignore", invalid="ignore"):
            targets = bellman_targets(batch, self.target or self.network, s.gamma)
            grads, loss = neural.backward(self.network, batch["obs"], batch["actions"], targets)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        neural.apply_update(self.network, self.optimizer, grads, learning_rate)
        if self.target is not None and self.optimizer.step % s.target_sync_updates == 0:
            self.target = self.network.copy()
        return loss

    def save(self, path) -> None:
        neural.save(self.network, path, episode=self.episode, global_step=self.global_step,
                    optimizer_step=self.optimizer.step)

    def load(self, path) -> None:
        mlp, meta = neural.load(path)
        if mlp.dims != self.network.dims:
            raise neural.CheckpointError(
                f"checkpoint dims {mlp.dims} do not match agent dims {self.network.dims}"
            )
        self.network = mlp
        if self.target is not None:
            self.target = mlp.copy()
        self.episode = int(meta.get("episode", 0))
        self.global_step = int(meta.get("global_step", 0))


def select_action(agent: DqnAgent, obs, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over valid slots."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no valid action")
    if epsilon >= 1.0 or (epsilon > 0.0 and rng.random() < epsilon):
        return random_select(mask, rng)
    return masked_argmax(agent.q_values(obs), mask)
