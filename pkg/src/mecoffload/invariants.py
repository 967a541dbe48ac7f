"""Per-interval consistency checks on a running simulation.

Used by the test suite and the acceptance run; cheap enough to leave on for
short diagnostic episodes.
"""

from __future__ import annotations

from collections import deque

from .sim import EnvState

ENERGY_RTOL = 1e-12


class InvariantViolation(AssertionError):
    pass


class InvariantChecker:
    """Call :meth:`check` after every :func:`~mecoffload.sim.step`.

    With ``strict=False`` violations are collected in ``self.violations``
    instead of raised.
    """

    def __init__(self, env: EnvState, strict: bool = True):
        self.strict = strict
        self.violations: list[str] = []
        self.last_t = env.t
        self.local_last_id = {u.id: -1 for u in env.users}
        self.server_fifo = {s.id: deque(t.id for t in s.queue) for s in env.servers}
        self.local_ids: set[int] = set()
        self.offloaded_ids: set[int] = set()
        self.remaining = {t.id: t.remaining_server_bits for s in env.servers for t in s.queue}
        self.intervals = 0

    def _fail(self, msg: str) -> None:
        if self.strict:
            raise InvariantViolation(msg)
        self.violations.append(msg)

    def check(self, env: EnvState) -> None:
        info = env.last_interval
        cfg = env.config
        t = info["t"]
        self.intervals += 1
        if t != self.last_t or env.t != t + 1:
            self._fail(f"clock jumped: expected interval {self.last_t}, saw {t} -> {env.t}")
        self.last_t = env.t
        bits = cfg.task_size_bits

        for j, user in enumerate(env.users):
            before = info["energy_before"][j]
            if before <= 0.0:
                self._fail(f"t={t}: user {j} stepped with energy {before} <= 0")
            sel = info["selected"][j]
            e_off, e_loc = info["e_off"][j], info["e_loc"][j]
            if sel and (e_loc != 0.0 or info["n_loc"][j] != 0):
                self._fail(f"t={t}: offloading user {j} also computed locally")
            if not sel and (e_off != 0.0 or info["n_off"][j] != 0):
                self._fail(f"t={t}: local user {j} was charged for offloading")
            expected = before - e_off - e_loc - cfg.standby_energy
            if abs(user.energy - expected) > ENERGY_RTOL * max(abs(before), cfg.standby_energy):
                self._fail(f"t={t}: user {j} energy {user.energy} != branch formula {expected}")
            if user.energy > before - cfg.standby_energy * (1 - 1e-9):
                self._fail(f"t={t}: user {j} energy dropped by less than standby")
            if info["n_loc"][j] * bits > info["loc_budget"][j]:
                self._fail(f"t={t}: user {j} computed beyond its local budget")
            if info["n_off"][j] * bits > info["off_budget"][j]:
                self._fail(f"t={t}: user {j} offloaded beyond its uplink budget")
            if user.alive != (user.energy > 0.0):
                self._fail(f"t={t}: user {j} alive flag inconsistent")

            prev_arrival, prev_id = None, -1
            for task in user.queue:
                if task.id <= prev_id or (prev_arrival is not None and task.arrival_interval < prev_arrival):
                    self._fail(f"t={t}: user {j} queue out of FIFO order")
                prev_arrival, prev_id = task.arrival_interval, task.id

            for tid in info["local_done"].get(j, []):
                if tid <= self.local_last_id[j]:
                    self._fail(f"t={t}: user {j} completed task {tid} out of arrival order")
                self.local_last_id[j] = tid
                if tid in self.offloaded_ids:
                    self._fail(f"t={t}: task {tid} computed locally after being offloaded")
                self.local_ids.add(tid)

        for j, tids in info["offloaded"].items():
            server = env.users[j].server
            for tid in tids:
                if tid in self.local_ids or tid in self.offloaded_ids:
                    self._fail(f"t={t}: task {tid} offloaded twice or after local completion")
                self.offloaded_ids.add(tid)
                self.server_fifo[server].append(tid)

        for s in env.servers:
            if info["server_bits"][s.id] > info["server_budget"]:
                self._fail(f"t={t}: server {s.id} exceeded its bit budget")
            fifo = self.server_fifo[s.id]
            for tid in info["server_done"][s.id]:
                if not fifo or fifo[0] != tid:
                    self._fail(f"t={t}: server {s.id} completed task {tid} out of FIFO order")
                    if tid in fifo:
                        fifo.remove(tid)
                else:
                    fifo.popleft()
            if [task.id for task in s.queue] != list(fifo):
                self._fail(f"t={t}: server {s.id} queue differs from its arrival order")
            for task in s.queue:
                prev = self.remaining.get(task.id, task.size_bits)
                if not 0 <= task.remaining_server_bits <= prev <= task.size_bits:
                    self._fail(f"t={t}: task {task.id} server progress went backwards")
                self.remaining[task.id] = task.remaining_server_bits

        self._check_conservation(env)
        depleted = any(u.energy <= 0.0 for u in env.users)
        if env.crashed != (depleted or env.t > cfg.max_intervals):
            self._fail(f"t={t}: crashed flag {env.crashed} inconsistent with state")

    def _check_conservation(self, env: EnvState) -> None:
        k = len(env.users)
        in_servers = [0] * k
        for s in env.servers:
            for task in s.queue:
                in_servers[task.owner] += 1
        done = [0] * k
        for task in env.completed_tasks:
            done[task.owner] += 1
            if task.completion_interval is None or task.completion_interval < task.arrival_interval:
                self._fail(f"task {task.id} has completion before arrival")
        for j, user in enumerate(env.users):
            if user.arrived != len(user.queue) + in_servers[j] + done[j]:
                self._fail(
                    f"t={env.t - 1}: user {j} task conservation broken: arrived {user.arrived}, "
                    f"queued {len(user.queue)}, at servers {in_servers[j]}, done {done[j]}"
                )

    def check_final(self, env: EnvState) -> None:
        if not env.crashed:
            self._fail("episode ended without termination")
        if env.censored and any(u.energy <= 0.0 for u in env.users):
            self._fail("censored episode also depleted a user")
