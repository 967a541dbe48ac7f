"""Episodic multi-agent training, paired policy evaluation and server-count sweeps."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import agents as ag
from .config import SimConfig
from .sim import EnvState, finalize_metrics, init_episode, observe, step

log = logging.getLogger(__name__)

NA = "NA"
MOVING_WINDOW = 100

# seed-derivation tags; episode i of a run is reproducible in isolation
TRAIN_TAG = 0
EVAL_TAG = 1
AGENT_TAG = 2
POLICY_TAG = 3


class TrainingDiverged(RuntimeError):
    def __init__(self, episode: int, cause: Exception):
        super().__init__(f"training diverged at episode {episode}: {cause}")
        self.episode = episode


def derive_seed(master: int, tag: int, index: int) -> int:
    ss = np.random.SeedSequence([int(master), int(tag), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def learning_rate_at(episode: int, initial: float = 5e-3, halve_every: int = 100) -> float:
    return initial * 0.5 ** (episode // halve_every)


# ----------------------------------------------------------------------------
# policies


class Policy:
    """Chooses one pool user per server each interval."""

    name = "policy"

    def begin_episode(self, env: EnvState, episode_seed: int) -> None:
        pass

    def select(self, env: EnvState, observations) -> list[int]:
        raise NotImplementedError


class GreedyPolicy(Policy):
    def __init__(self, kind: str):
        if kind not in ("time_greedy", "energy_greedy"):
            raise ValueError(f"unknown greedy policy {kind!r}")
        self.name = kind
        self._pick = ag.time_greedy_select if kind == "time_greedy" else ag.energy_greedy_select

    def select(self, env, observations):
        return [recs[self._pick(recs)].user_id for recs in observations]


class RandomPolicy(Policy):
    name = "random"

    def begin_episode(self, env, episode_seed):
        self.rng = np.random.default_rng(derive_seed(episode_seed, POLICY_TAG, 0))

    def select(self, env, observations):
        return [recs[self.rng.integers(len(recs))].user_id for recs in observations]


class DqnPolicy(Policy):
    """Greedy (or epsilon-greedy) play of one trained agent per server."""

    name = "dqn"

    def __init__(self, agents: Sequence[ag.DqnAgent], slots: int, epsilon: float = 0.0):
        self.agents = list(agents)
        self.slots = slots
        self.epsilon = epsilon

    def select(self, env, observations):
        actions = []
        for agent, recs in zip(self.agents, observations):
            obs, mask = ag.encode_observation(recs, self.slots)
            actions.append(recs[agent.act(obs, mask, self.epsilon)].user_id)
        return actions


def make_policy(name: str) -> Policy:
    if name == "random":
        return RandomPolicy()
    return GreedyPolicy(name)


BASELINES = ("time_greedy", "energy_greedy", "random")


# ----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainSettings:
    dqn: ag.DqnSettings = field(default_factory=ag.DqnSettings)
    schedule: ag.EpsilonSchedule = field(default_factory=ag.EpsilonSchedule)
    lr_halving_episodes: int = 100
    updates_per_episode: int = 1


@dataclass
class RunSummary:
    records: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.records], dtype=float)

    def moving_average(self, name: str = "mean_return", window: int = MOVING_WINDOW) -> np.ndarray:
        """Trailing mean over up to ``window`` episodes (NA entries skipped)."""
        values = self.column(name)
        out = np.full(len(values), np.nan)
        for i in range(len(values)):
            chunk = values[max(0, i - window + 1): i + 1]
            chunk = chunk[~np.isnan(chunk)]
            if chunk.size:
                out[i] = chunk.mean()
        return out


@dataclass
class TrainResult:
    summary: RunSummary
    agents: list[ag.DqnAgent]
    config: SimConfig
    settings: TrainSettings

    @property
    def slots(self) -> int:
        return self.config.max_pool_size

    def policy(self, epsilon: float = 0.0) -> DqnPolicy:
        return DqnPolicy(self.agents, self.slots, epsilon)


def train_columns(num_servers: int) -> list[str]:
    cols = ["episode", "lifetime", "mean_tct", "num_completed", "censored", "epsilon",
            "learning_rate", "mean_return", "mean_learning_return"]
    cols += [f"return_{i}" for i in range(num_servers)]
    cols += [f"loss_{i}" for i in range(num_servers)]
    return cols


def make_agents(config: SimConfig, settings: TrainSettings, seed: int) -> list[ag.DqnAgent]:
    slots = config.max_pool_size
    return [
        ag.DqnAgent(slots * ag.FEATURES_PER_SLOT, slots, settings.dqn,
                    seed=derive_seed(seed, AGENT_TAG, i), schedule=settings.schedule)
        for i in range(config.num_servers)
    ]


def train(config: SimConfig, seed: int, num_episodes: int,
          settings: TrainSettings | None = None,
          checkpoint_dir: str | Path | None = None, checkpoint_every: int = 0,
          agents: list[ag.DqnAgent] | None = None) -> TrainResult:
    """Train one DQN agent per server over ``num_episodes`` episodes.

    Each agent gets ``updates_per_episode`` minibatch steps at the end of every
    episode. Checkpoints (one ``.npz`` per agent) are written every
    ``checkpoint_every`` episodes and after the last one when ``checkpoint_dir``
    is given.
    """
    settings = settings or TrainSettings()
    config.validate()
    slots = config.max_pool_size
    agents = agents if agents is not None else make_agents(config, settings, seed)
    n = config.num_servers
    summary = RunSummary()
    post_steps = agents[0].global_step if agents else 0

    for episode in range(num_episodes):
        lr = learning_rate_at(episode, settings.dqn.learning_rate, settings.lr_halving_episodes)
        env = init_episode(config, derive_seed(seed, TRAIN_TAG, episode))
        encoded = [ag.encode_observation(observe(env, i), slots) for i in range(n)]
        returns = np.zeros(n)
        learning_returns = np.zeros(n)
        eps_start = ag.epsilon_value(settings.schedule, episode, post_steps)
        while not env.crashed:
            eps = ag.epsilon_value(settings.schedule, episode, post_steps)
            slot_actions = [agents[i].act(*encoded[i], eps) for i in range(n)]
            users = [env.servers[i].pool[a] for i, a in enumerate(slot_actions)]
            out = step(env, users)
            next_encoded = [ag.encode_observation(recs, slots) for recs in out.observations]
            for i in range(n):
                obs, _ = encoded[i]
                next_obs, next_mask = next_encoded[i]
                agents[i].remember(obs, slot_actions[i], out.rewards[i], next_obs,
                                   out.terminal, next_mask)
            returns += out.rewards
            learning_returns += [agents[i].learning_reward(r) for i, r in enumerate(out.rewards)]
            encoded = next_encoded
            if episode >= settings.schedule.pretrain_episodes:
                post_steps += 1

        losses = [[] for _ in range(n)]
        try:
            for i, agent in enumerate(agents):
                for _ in range(settings.updates_per_episode):
                    loss = agent.update(lr)
                    if loss is not None:
                        losses[i].append(loss)
        except FloatingPointError as exc:
            raise TrainingDiverged(episode, exc) from exc
        for agent in agents:
            agent.episode = episode + 1
            agent.global_step = post_steps

        m = finalize_metrics(env)
        record = {
            "episode": episode,
            "lifetime": m.lifetime,
            "mean_tct": m.mean_tct,
            "num_completed": m.num_completed,
            "censored": int(m.censored),
            "epsilon": eps_start,
            "learning_rate": lr,
            "mean_return": float(returns.mean()),
            "mean_learning_return": float(learning_returns.mean()),
        }
        for i in range(n):
            record[f"return_{i}"] = float(returns[i])
        for i in range(n):
            record[f"loss_{i}"] = float(np.mean(losses[i])) if losses[i] else None
        summary.records.append(record)
        if checkpoint_dir is not None and checkpoint_every and (episode + 1) % checkpoint_every == 0:
            save_agents(agents, Path(checkpoint_dir) / f"ep{episode + 1:06d}")
        if (episode + 1) % 100 == 0:
            log.info("episode %d: LT avg %.1f, return avg %.4g, eps %.3f, lr %.3g",
                     episode + 1, np.mean(summary.column("lifetime")[-100:]),
                     np.mean(summary.column("mean_return")[-100:]), eps_start, lr)

    if checkpoint_dir is not None:
        save_agents(agents, Path(checkpoint_dir) / "final")
    return TrainResult(summary, agents, config, settings)


def save_agents(agents: Sequence[ag.DqnAgent], directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, agent in enumerate(agents):
        agent.save(directory / f"agent{i}.npz")
    return directory


def load_agents(config: SimConfig, directory: str | Path,
                settings: TrainSettings | None = None) -> list[ag.DqnAgent]:
    """Rebuild one agent per server from ``agent<i>.npz`` files (replay buffers are not saved)."""
    settings = settings or TrainSettings()
    directory = Path(directory)
    agents = make_agents(config, settings, 0)
    for i, agent in enumerate(agents):
        agent.load(directory / f"agent{i}.npz")
    return agents


# ----------------------------------------------------------------------------
# evaluation


def evaluation_seeds(seed: int, num_episodes: int) -> list[int]:
    return [derive_seed(seed, EVAL_TAG, i) for i in range(num_episodes)]


def run_policy_episode(policy: Policy, config: SimConfig, episode_seed: int):
    env = init_episode(config, episode_seed)
    policy.begin_episode(env, episode_seed)
    obs = [observe(env, i) for i in range(len(env.servers))]
    while not env.crashed:
        obs = step(env, policy.select(env, obs)).observations
    return finalize_metrics(env)


def _mean_std(values: Iterable[float | None]) -> tuple[float | None, float | None]:
    v = [x for x in values if x is not None]
    if not v:
        return None, None
    return float(np.mean(v)), float(np.std(v))


def summarize(rows: list[dict], key: str = "policy") -> dict[str, dict]:
    out: dict[str, dict] = {}
    for name in dict.fromkeys(r[key] for r in rows):
        sub = [r for r in rows if r[key] == name]
        lt_mean, lt_std = _mean_std(r["lifetime"] for r in sub)
        tct_mean, tct_std = _mean_std(r["mean_tct"] for r in sub)
        out[name] = {"episodes": len(sub), "lifetime_mean": lt_mean, "lifetime_std": lt_std,
                     "tct_mean": tct_mean, "tct_std": tct_std}
    return out


def evaluate(policies: dict[str, Policy], config: SimConfig, num_episodes: int,
             seed: int) -> tuple[list[dict], dict[str, dict]]:
    """Paired evaluation: every policy plays the same episode seeds.

    Returns one row per (policy, episode) and per-policy mean/std of lifetime
    and mean task completion time.
    """
    seeds = evaluation_seeds(seed, num_episodes)
    rows = []
    for name, policy in policies.items():
        for idx, s in enumerate(seeds):
            m = run_policy_episode(policy, config, s)
            rows.append({"policy": name, "episode": idx, "seed": s, "lifetime": m.lifetime,
                         "mean_tct": m.mean_tct, "num_completed": m.num_completed,
                         "censored": int(m.censored)})
    return rows, summarize(rows)


def sweep_servers(config: SimConfig, server_counts: Sequence[int], num_seeds: int, seed: int,
                  train_episodes: int, settings: TrainSettings | None = None,
                  trained: dict[int, TrainResult] | None = None) -> list[dict]:
    """Train a DQN team per server count, then evaluate it on ``num_seeds`` paired seeds.

    ``trained`` may supply already-trained teams keyed by server count.
    """
    rows = []
    for count in server_counts:
        if count < 1 or count > config.num_users:
            raise ValueError(f"server count {count} outside [1, {config.num_users}]")
    for count in server_counts:
        cfg = config.replace(num_servers=int(count))
        result = (trained or {}).get(count)
        if result is None:
            result = train(cfg, derive_seed(seed, TRAIN_TAG, 10_000 + count), train_episodes,
                           settings)
        ev_rows, _ = evaluate({"dqn": result.policy()}, cfg, num_seeds, seed)
        for r in ev_rows:
            rows.append({"num_servers": count, **r})
    return rows


# ----------------------------------------------------------------------------
# CSV


def _format(value) -> str:
    if value is None:
        return NA
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return NA
        return repr(value)
    return str(value)


def write_csv(records: Sequence[dict], path: str | Path, columns: Sequence[str] | None = None) -> Path:
    """Header plus one row per record; columns fixed by ``columns`` or the first record."""
    path = Path(path)
    if columns is None:
        columns = list(records[0].keys()) if records else []
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in records:
            writer.writerow([_format(r.get(c)) for c in columns])
    return path


def _parse(text: str):
    if text == NA:
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]
