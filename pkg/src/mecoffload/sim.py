"""Discrete-time simulator of energy-constrained users offloading to MEC servers.

One call to :func:`step` executes a full interval in a fixed order: arrivals,
offloading by the user each server selected, local computation by everybody
else, standby drain, server-side FIFO processing, rewards, clock advance.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .config import SimConfig

RECORD_FORMAT = "mecoffload.envstate"
RECORD_VERSION = 1
STREAMS = ("topology", "arrivals", "fading", "exploration")
MAX_PLACEMENT_ATTEMPTS = 100
REWARD_SCALE = 1e-9


class SimulationError(RuntimeError):
    """Contract violation while driving the simulator."""


class PlacementError(SimulationError):
    """No placement gave every server a nonempty user pool."""


@dataclass(slots=True)
class Task:
    id: int
    owner: int
    size_bits: int
    arrival_interval: int
    completion_interval: int | None = None
    remaining_server_bits: int = 0


@dataclass(slots=True)
class UserState:
    id: int
    position: tuple[float, float]
    energy: float
    server: int
    queue: deque = field(default_factory=deque)
    alive: bool = True
    # sum of arrival intervals of queued tasks, for O(1) mean wait
    arrival_sum: int = 0
    arrived: int = 0


@dataclass(slots=True)
class ServerState:
    id: int
    position: tuple[float, float]
    pool: list[int]
    bandwidth_hz: float
    queue: deque = field(default_factory=deque)


@dataclass
class EnvState:
    config: SimConfig
    users: list[UserState]
    servers: list[ServerState]
    rng: dict[str, np.random.Generator]
    long_term_gains: np.ndarray
    fading_gains: np.ndarray
    t: int = 1
    completed_tasks: list[Task] = field(default_factory=list)
    crashed: bool = False
    censored: bool = False
    next_task_id: int = 0
    seed: int | None = None
    last_interval: dict | None = None

    def link_gain(self, user_id: int) -> float:
        return float(self.long_term_gains[user_id] * self.fading_gains[user_id])


class UserFeatures(NamedTuple):
    user_id: int
    queue_length: int
    energy: float
    mean_wait: float
    uplink_snr_db: float


class StepOutcome(NamedTuple):
    rewards: list[float]
    observations: list[list[UserFeatures]]
    terminal: bool
    info: dict


@dataclass(frozen=True)
class Metrics:
    lifetime: int
    mean_tct: float | None
    num_completed: int
    censored: bool


# ----------------------------------------------------------------------------
# formulas


def max_feasible_power(energy: float, tau: float) -> float:
    """Largest power a user can sustain over one interval with ``energy`` joules."""
    return kernels.max_feasible_power(energy, tau)


def local_compute_budget(p_max, f_cap, kappa, tau, cycles_per_bit) -> int:
    """Bits computable locally in one interval at ``min(f_cap, cbrt(p_max / kappa))``."""
    return int(kernels.local_compute_budget(p_max, f_cap, kappa, tau, cycles_per_bit))


def path_gain(distance: float, config: SimConfig, fading: float = 1.0) -> float:
    """Log-distance gain with a 1 m near-field clamp, times a fading factor."""
    return kernels.path_gain(distance, config.ref_gain_linear, config.pathloss_exponent) * fading


def uplink_rate(bandwidth: float, gain: float, tx_power: float, noise_psd: float) -> float:
    """Shannon rate in bits/s; ``noise_psd`` is in W/Hz."""
    return kernels.uplink_rate(bandwidth, gain, tx_power, noise_psd)


def sample_arrivals(rate: float, rng: np.random.Generator) -> int:
    return int(kernels.poisson_knuth(rng, rate))


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


def _draw_fading(cfg: SimConfig, rng: np.random.Generator, k: int) -> np.ndarray:
    if not cfg.fading_enabled:
        return np.ones(k)
    # unit-mean exponential by inversion, so both kernel backends agree
    return -np.log1p(-rng.random(k))


# ----------------------------------------------------------------------------
# episode lifecycle


def _associate(cfg: SimConfig, user_pos: np.ndarray, server_pos: np.ndarray):
    gains = np.empty((len(user_pos), len(server_pos)))
    for j, up in enumerate(user_pos):
        for i, sp in enumerate(server_pos):
            d = math.hypot(up[0] - sp[0], up[1] - sp[1])
            gains[j, i] = kernels.path_gain(d, cfg.ref_gain_linear, cfg.pathloss_exponent)
    # np.argmax returns the first maximum: ties go to the lowest server id
    assoc = np.argmax(gains, axis=1)
    return assoc, gains[np.arange(len(user_pos)), assoc]


def init_episode(config: SimConfig, seed: int) -> EnvState:
    """Drop users and servers, draw initial energies and associate users."""
    config.validate()
    cfg = config
    rng = make_streams(seed)
    topo = rng["topology"]
    k, n = cfg.num_users, cfg.num_servers
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        server_pos = topo.random((n, 2)) * cfg.area_side
        user_pos = topo.random((k, 2)) * cfg.area_side
        assoc, lt_gains = _associate(cfg, user_pos, server_pos)
        if len(set(assoc.tolist())) == n:
            break
    else:
        raise PlacementError(
            f"no placement with a nonempty pool per server after {MAX_PLACEMENT_ATTEMPTS} "
            f"attempts (K={k}, N={n})"
        )
    lo, hi = cfg.emax_range
    energies = []
    for _ in range(k):
        u = topo.random()
        while u == 0.0:  # open interval
            u = topo.random()
        energies.append(lo + (hi - lo) * u)

    users = [
        UserState(id=j, position=(float(user_pos[j, 0]), float(user_pos[j, 1])),
                  energy=float(energies[j]), server=int(assoc[j]))
        for j in range(k)
    ]
    servers = [
        ServerState(id=i, position=(float(server_pos[i, 0]), float(server_pos[i, 1])),
                    pool=[j for j in range(k) if assoc[j] == i],
                    bandwidth_hz=cfg.bandwidth_per_server)
        for i in range(n)
    ]
    return EnvState(
        config=cfg, users=users, servers=servers, rng=rng,
        long_term_gains=np.asarray(lt_gains, dtype=np.float64),
        fading_gains=_draw_fading(cfg, rng["fading"], k), seed=seed,
    )


def observe(env: EnvState, server_id: int) -> list[UserFeatures]:
    """Raw features of each pool user, in ascending user id."""
    cfg = env.config
    server = env.servers[server_id]
    noise = cfg.noise_psd_watts_hz * server.bandwidth_hz
    records = []
    for j in server.pool:
        user = env.users[j]
        q = len(user.queue)
        wait = env.t - user.arrival_sum / q if q else 0.0
        snr = env.link_gain(j) * cfg.max_tx_power_watts / noise
        snr_db = 10.0 * math.log10(snr) if snr > 0 else -math.inf
        records.append(UserFeatures(j, q, user.energy, wait, snr_db))
    return records


def step(env: EnvState, actions: Sequence[int]) -> StepOutcome:
    """Advance one interval. ``actions[i]`` is the user id server ``i`` selects."""
    if env.crashed:
        raise SimulationError("step called on a crashed (terminated) episode")
    cfg = env.config
    if len(actions) != len(env.servers):
        raise SimulationError(f"expected {len(env.servers)} actions, got {len(actions)}")
    k = len(env.users)
    selected = np.zeros(k, dtype=np.uint8)
    for server, user_id in zip(env.servers, actions):
        if user_id not in server.pool:
            raise SimulationError(
                f"server {server.id} selected user {user_id}, not in its pool {server.pool}"
            )
        selected[user_id] = 1
    t = env.t

    # (1) arrivals
    counts = kernels.poisson_batch(env.rng["arrivals"], cfg.arrival_rate, k)
    bits = int(cfg.task_size_bits)
    for user, c in zip(env.users, counts.tolist()):
        for _ in range(c):
            user.queue.append(Task(env.next_task_id, user.id, bits, t, None, bits))
            env.next_task_id += 1
        user.arrival_sum += c * t
        user.arrived += c

    # (2)-(4) per-user physics in one kernel call
    energy = np.fromiter((u.energy for u in env.users), dtype=np.float64, count=k)
    qlen = np.fromiter((len(u.queue) for u in env.users), dtype=np.int64, count=k)
    gains = env.long_term_gains * env.fading_gains
    phys = kernels.interval_physics(
        energy, qlen, selected, gains, cfg.interval_duration, cfg.user_cpu_hz, cfg.kappa,
        cfg.user_cycles_per_bit, cfg.max_tx_power_watts, cfg.bandwidth_per_server,
        cfg.noise_psd_watts_hz, bits, cfg.standby_energy,
    )
    n_off = phys["n_off"].tolist()
    n_loc = phys["n_loc"].tolist()
    offloaded: dict[int, list[int]] = {}
    local_done: dict[int, list[int]] = {}
    for user in env.users:
        j = user.id
        moved = n_off[j] if selected[j] else n_loc[j]
        taken = [user.queue.popleft() for _ in range(moved)]
        user.arrival_sum -= sum(task.arrival_interval for task in taken)
        if selected[j]:
            env.servers[user.server].queue.extend(taken)
            offloaded[j] = [task.id for task in taken]
        else:
            for task in taken:
                task.completion_interval = t
            env.completed_tasks.extend(taken)
            local_done[j] = [task.id for task in taken]
        user.energy = float(phys["new_energy"][j])

    # (5) server FIFO processing with carry-over
    budget_per_server = cfg.server_bit_budget
    server_done: dict[int, list[int]] = {}
    server_bits: dict[int, int] = {}
    for server in env.servers:
        budget = budget_per_server
        done = []
        while server.queue and budget > 0:
            task = server.queue[0]
            work = min(budget, task.remaining_server_bits)
            task.remaining_server_bits -= work
            budget -= work
            if task.remaining_server_bits == 0:
                server.queue.popleft()
                task.completion_interval = t
                env.completed_tasks.append(task)
                done.append(task.id)
        server_done[server.id] = done
        server_bits[server.id] = budget_per_server - budget

    # (6) energy-efficiency reward of the selected user
    rewards = []
    for server, user_id in zip(env.servers, actions):
        sent = n_off[user_id] * bits
        e = float(phys["e_off"][user_id])
        rewards.append(sent / e * REWARD_SCALE if sent > 0 and e > 0 else 0.0)

    # (7) clock, termination, fresh fading
    env.t = t + 1
    depleted = any(u.energy <= 0.0 for u in env.users)
    for u in env.users:
        u.alive = u.energy > 0.0
    if depleted:
        env.crashed = True
    elif env.t > cfg.max_intervals:
        env.crashed = True
        env.censored = True
    env.fading_gains = _draw_fading(cfg, env.rng["fading"], k)

    info = {
        "t": t,
        "arrivals": counts.tolist(),
        "selected": selected.astype(bool).tolist(),
        "energy_before": energy.tolist(),
        "offloaded": offloaded,
        "local_done": local_done,
        "server_done": server_done,
        "server_bits": server_bits,
        "server_budget": budget_per_server,
        **{key: value.tolist() for key, value in phys.items()},
    }
    env.last_interval = info
    observations = [observe(env, i) for i in range(len(env.servers))]
    return StepOutcome(rewards, observations, env.crashed, info)


def finalize_metrics(env: EnvState) -> Metrics:
    """System lifetime and mean completion time over tasks finished before it."""
    if not env.crashed:
        raise SimulationError("episode still running; metrics need a terminated episode")
    lifetime = env.t - 1
    delays = [
        task.completion_interval - task.arrival_interval
        for task in env.completed_tasks
        if task.completion_interval < lifetime
    ]
    mean_tct = sum(delays) / len(delays) if delays else None
    return Metrics(lifetime, mean_tct, len(delays), env.censored)


def run_episode(config: SimConfig, seed: int, choose) -> tuple[Metrics, EnvState]:
    """Run one episode to termination; ``choose(env, observations)`` returns the actions."""
    env = init_episode(config, seed)
    obs = [observe(env, i) for i in range(len(env.servers))]
    while not env.crashed:
        obs = step(env, choose(env, obs)).observations
    return finalize_metrics(env), env


# ----------------------------------------------------------------------------
# trace records


def _task_to_list(task: Task) -> list:
    return [task.id, task.owner, task.size_bits, task.arrival_interval,
            task.completion_interval, task.remaining_server_bits]


def to_record(env: EnvState) -> dict:
    """Versioned, JSON-serializable snapshot of the full simulator state."""
    return {
        "format": RECORD_FORMAT,
        "version": RECORD_VERSION,
        "config": env.config.to_dict(),
        "seed": env.seed,
        "t": env.t,
        "crashed": env.crashed,
        "censored": env.censored,
        "next_task_id": env.next_task_id,
        "long_term_gains": env.long_term_gains.tolist(),
        "fading_gains": env.fading_gains.tolist(),
        "rng": {name: gen.bit_generator.state for name, gen in env.rng.items()},
        "users": [
            {"id": u.id, "position": list(u.position), "energy": u.energy, "server": u.server,
             "alive": u.alive, "arrival_sum": u.arrival_sum, "arrived": u.arrived,
             "queue": [_task_to_list(task) for task in u.queue]}
            for u in env.users
        ],
        "servers": [
            {"id": s.id, "position": list(s.position), "pool": list(s.pool),
             "bandwidth_hz": s.bandwidth_hz, "queue": [_task_to_list(task) for task in s.queue]}
            for s in env.servers
        ],
        "completed_tasks": [_task_to_list(task) for task in env.completed_tasks],
    }


def from_record(record: dict) -> EnvState:
    if record.get("format") != RECORD_FORMAT:
        raise ValueError(f"not an EnvState record: format={record.get('format')!r}")
    if record.get("version") != RECORD_VERSION:
        raise ValueError(f"unsupported EnvState record version {record.get('version')!r}")
    rng = {}
    for name, state in record["rng"].items():
        bg = np.random.PCG64()
        bg.state = state
        rng[name] = np.random.Generator(bg)
    users = [
        UserState(id=u["id"], position=tuple(u["position"]), energy=u["energy"],
                  server=u["server"], queue=deque(Task(*x) for x in u["queue"]),
                  alive=u["alive"], arrival_sum=u["arrival_sum"], arrived=u["arrived"])
        for u in record["users"]
    ]
    servers = [
        ServerState(id=s["id"], position=tuple(s["position"]), pool=list(s["pool"]),
                    bandwidth_hz=s["bandwidth_hz"], queue=deque(Task(*x) for x in s["queue"]))
        for s in record["servers"]
    ]
    return EnvState(
        config=SimConfig.from_dict(record["config"]), users=users, servers=servers, rng=rng,
        long_term_gains=np.asarray(record["long_term_gains"], dtype=np.float64),
        fading_gains=np.asarray(record["fading_gains"], dtype=np.float64),
        t=record["t"], completed_tasks=[Task(*x) for x in record["completed_tasks"]],
        crashed=record["crashed"], censored=record["censored"],
        next_task_id=record["next_task_id"], seed=record["seed"],
    )
