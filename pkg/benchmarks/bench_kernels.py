"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--users 5 50] [--repeat 5]

Kernel timings call both modules directly. The end-to-end figure runs whole
episodes in a subprocess per backend, since the backend is fixed at import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mecoffload import _kernels_py

try:
    from mecoffload import _kernels as _compiled
except ImportError:
    _compiled = None

EPISODES_SCRIPT = """
import json, time
from mecoffload import kernels
from mecoffload.config import SimConfig
from mecoffload.sim import run_episode
cfg = SimConfig(num_users={users}, num_servers=min(3, {users}))
steps = 0
t0 = time.perf_counter()
for seed in range({episodes}):
    m, env = run_episode(cfg, seed, lambda env, obs: [r[0].user_id for r in obs])
    steps += env.t - 1
print(json.dumps({{"backend": kernels.BACKEND, "steps": steps,
                  "seconds": time.perf_counter() - t0}}))
"""


def physics_args(k, seed=0):
    rng = np.random.default_rng(seed)
    return dict(
        energy=rng.uniform(1e-4, 1.0, k), qlen=rng.integers(0, 40, k).astype(np.int64),
        selected=(rng.random(k) < 0.3).astype(np.uint8), gain=rng.uniform(1e-8, 1e-4, k),
        tau=0.1, f_cap=1e9, kappa=1e-27, cycles_per_bit=500.0, p_tx_max=0.5,
        bandwidth=20e6 / 3, noise_psd=4e-21, task_bits=8000, standby=1e-7,
    )


def best_of(stmt, number, repeat):
    return min(timeit.repeat(stmt, number=number, repeat=repeat)) / number


def bench_kernels(users, repeat):
    rows = []
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    for k in users:
        args = physics_args(k)
        for name, mod in backends:
            t = best_of(lambda: mod.interval_physics(**args), 2000, repeat)
            rows.append((f"interval_physics K={k}", name, t))
    for name, mod in backends:
        rng = np.random.default_rng(0)
        t = best_of(lambda: mod.poisson_batch(rng, 10.0, 50), 2000, repeat)
        rows.append(("poisson_batch n=50", name, t))
    return rows


def bench_episodes(users, episodes):
    out = []
    for pure in ("1", "0"):
        env = {**os.environ, "MECOFFLOAD_PURE_PYTHON": pure}
        res = subprocess.run(
            [sys.executable, "-c", EPISODES_SCRIPT.format(users=users, episodes=episodes)],
            env=env, check=True, capture_output=True, text=True,
        )
        out.append(json.loads(res.stdout))
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--users", type=int, nargs="+", default=[5, 50])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--episodes", type=int, default=40)
    args = parser.parse_args()

    if _compiled is None:
        print("compiled kernels not built; timing the Python backend only")
    print(f"{'kernel':28s} {'backend':8s} {'us/call':>10s}")
    for label, name, t in bench_kernels(args.users, args.repeat):
        print(f"{label:28s} {name:8s} {t * 1e6:10.2f}")

    print()
    print(f"{'episodes':28s} {'backend':8s} {'us/step':>10s}")
    for r in bench_episodes(5, args.episodes):
        print(f"{'K=5, first-user policy':28s} {r['backend']:8s} {r['seconds'] / r['steps'] * 1e6:10.2f}")


if __name__ == "__main__":
    main()
