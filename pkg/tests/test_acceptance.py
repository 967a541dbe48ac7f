"""Acceptance criteria, one test each.

Every test emits a single ``[PASS]`` or ``[FAIL]`` line (shown in the pytest
terminal summary, and on stdout when run as a script) before asserting.
Criteria 5 to 7 train full-size agents and take minutes.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mecoffload import cli, harness, neural
from mecoffload.config import SimConfig
from mecoffload.diagnostics import fit_chain
from mecoffload.invariants import InvariantChecker
from mecoffload.sim import (
    Task, finalize_metrics, init_episode, local_compute_budget, max_feasible_power, step,
)

TRAIN_SEED = 0
TRAIN_EPISODES = 2000
EVAL_EPISODES = 50
EVAL_SEED = 1
SWEEP_SEEDS = 20


def report(number, title, ok, detail, started):
    line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail} "
            f"({time.perf_counter() - started:.1f}s)")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="session")
def trained_default():
    return harness.train(SimConfig(), TRAIN_SEED, TRAIN_EPISODES)


def test_criterion_1_formula_oracles():
    t0 = time.perf_counter()
    cfg = SimConfig(num_servers=1, num_users=1, arrival_rate=0.0, fading_enabled=False,
                    max_tx_power_watts=0.5)
    checks = {}
    checks["P_max = 5 W"] = max_feasible_power(0.5, 0.1) == pytest.approx(5.0)
    checks["local budget 200000"] = local_compute_budget(5.0, 1e9, 1e-27, 0.1, 500) == 200_000
    checks["4308 bits -> idle"] = local_compute_budget(1e-5, 1e9, 1e-27, 0.1, 500) == 4308 < 8000

    env = init_episode(cfg, 0)
    env.long_term_gains[:] = 8e-6  # 5 m at -30 dB reference, exponent 3
    user = env.users[0]
    user.energy = 0.5
    for i in range(10):
        user.queue.append(Task(i, 0, 8000, 1, None, 8000))
    user.arrival_sum, user.arrived, env.next_task_id = 10, 10, 10
    info = step(env, [0]).info
    rate, e_off = info["rate"][0], info["e_off"][0]
    checks["rate 5.12e8"] = abs(rate / 5.12e8 - 1) <= 1e-3
    checks["E_offload 7.82e-5"] = abs(e_off / 7.82e-5 - 1) <= 1e-3

    env = init_episode(cfg.replace(max_tx_power_watts=SimConfig().max_tx_power_watts), 0)
    env.users[0].energy = 3.5e-7
    while not env.crashed:
        step(env, [0])
    checks["standby-only LT = 4"] = finalize_metrics(env).lifetime == 4

    failed = [k for k, ok in checks.items() if not ok]
    detail = f"rate {rate:.6g} b/s, E_off {e_off:.6g} J; " + (
        "all oracles match" if not failed else "mismatch: " + ", ".join(failed))
    assert report(1, "formula oracles", not failed, detail, t0)


def test_criterion_2_simulator_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    violations, steps = [], 0
    for episode in range(1000):
        n = int(rng.integers(1, 4))
        cfg = SimConfig(
            num_servers=n, num_users=n + int(rng.integers(0, 4)),
            arrival_rate=float(rng.choice([0.0, 2.0, 10.0, 30.0])),
            fading_enabled=bool(rng.integers(2)), max_intervals=int(rng.integers(5, 200)),
            emax_range=(float(rng.choice([1e-4, 1e-2])), 1.0),
        )
        seed = int(rng.integers(2 ** 32))
        env = init_episode(cfg, seed)
        checker = InvariantChecker(env, strict=False)
        while not env.crashed:
            step(env, [s.pool[rng.integers(len(s.pool))] for s in env.servers])
            checker.check(env)
        checker.check_final(env)
        steps += checker.intervals
        violations += [f"episode {episode}: {v}" for v in checker.violations]
    detail = f"1000 episodes, {steps} intervals, {len(violations)} violations"
    if violations:
        detail += f"; first: {violations[0]}"
    assert report(2, "simulator invariants", not violations, detail, t0)


def test_criterion_3_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(12):
        rng = np.random.default_rng(100 + seed)
        dims = [int(rng.integers(1, 7)) for _ in range(int(rng.integers(2, 5)))]
        mlp = neural.init(dims, seed)
        x = rng.normal(size=(5, dims[0]))
        actions = rng.integers(0, dims[-1], size=5)
        targets = rng.normal(size=5)
        grads, _ = neural.backward(mlp, x, actions, targets)
        analytic = neural.flatten_grads(grads)
        flat, numeric, h = mlp.flat(), np.empty(mlp.num_parameters), 1e-5
        for i in range(flat.size):
            losses = []
            for shift in (h, -h):
                probe = flat.copy()
                probe[i] += shift
                mlp.set_flat(probe)
                losses.append(neural.mse_loss(mlp, x, actions, targets))
            numeric[i] = (losses[0] - losses[1]) / (2 * h)
        mlp.set_flat(flat)
        scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
        worst = max(worst, float(np.abs(analytic - numeric).max() / scale))
    ok = worst <= 1e-4
    assert report(3, "gradient check", ok, f"12 networks, worst relative error {worst:.2e}", t0)


def test_criterion_4_toy_mdp():
    t0 = time.perf_counter()
    updates, err, _ = fit_chain(seed=0, max_updates=5000)
    ok = updates is not None
    detail = (f"max|Q - Q*| = {err:.4f} after {updates} updates" if ok
              else f"max|Q - Q*| = {err:.4f} after 5000 updates")
    assert report(4, "toy-MDP convergence", ok, detail, t0)


@pytest.mark.slow
def test_criterion_5_training_improvement(trained_default):
    t0 = time.perf_counter()
    summary = trained_default.summary
    raw = summary.column("mean_return")
    learned = summary.column("mean_learning_return")
    ratio = summary.moving_average("mean_return")[-1] / raw[:100].mean()
    learn_ratio = summary.moving_average("mean_learning_return")[-1] / learned[:100].mean()
    ok = ratio >= 1.2
    detail = (f"return MA100 at episode {len(raw)} / first-100 mean = {ratio:.3f} (need >= 1.2); "
              f"on the agents' transformed reward scale {learn_ratio:.3f}")
    assert report(5, "training convergence", ok, detail, t0)


@pytest.mark.slow
def test_criterion_6_tradeoff(trained_default):
    t0 = time.perf_counter()
    policies = {"dqn": trained_default.policy()}
    policies.update({name: harness.make_policy(name) for name in harness.BASELINES})
    _, s = harness.evaluate(policies, SimConfig(), EVAL_EPISODES, EVAL_SEED)
    dqn, tg, eg = s["dqn"], s["time_greedy"], s["energy_greedy"]
    parts = {
        "DQN LT >= 0.9 EG LT": dqn["lifetime_mean"] >= 0.9 * eg["lifetime_mean"],
        "DQN TCT <= 1.1 TG TCT": dqn["tct_mean"] <= 1.1 * tg["tct_mean"],
        "TG LT < DQN LT": tg["lifetime_mean"] < dqn["lifetime_mean"],
        "EG TCT > DQN TCT": eg["tct_mean"] > dqn["tct_mean"],
    }
    ok = all(parts.values())
    detail = "; ".join(f"{name} LT {v['lifetime_mean']:.2f} TCT {v['tct_mean']:.4f}"
                       for name, v in s.items())
    detail += " | unmet: " + (", ".join(k for k, v in parts.items() if not v) or "none")
    assert report(6, "lifetime/TCT trade-off", ok, detail, t0)


def _pooled_std(a, b):
    return math.sqrt((np.var(a, ddof=1) + np.var(b, ddof=1)) / 2)


@pytest.mark.slow
def test_criterion_7_server_sweep(trained_default):
    t0 = time.perf_counter()
    rows = harness.sweep_servers(SimConfig(), [1, 2, 3], SWEEP_SEEDS, EVAL_SEED,
                                 TRAIN_EPISODES, trained={3: trained_default})
    lt = {n: [r["lifetime"] for r in rows if r["num_servers"] == n] for n in (1, 2, 3)}
    tct = {n: [r["mean_tct"] for r in rows if r["num_servers"] == n and r["mean_tct"] is not None]
           for n in (1, 2, 3)}
    ok, notes = True, []
    for lo, hi in ((1, 2), (2, 3)):
        lt_ok = np.mean(lt[hi]) >= np.mean(lt[lo]) - _pooled_std(lt[lo], lt[hi])
        tct_ok = np.mean(tct[hi]) <= np.mean(tct[lo]) + _pooled_std(tct[lo], tct[hi])
        ok &= lt_ok and tct_ok
        if not lt_ok:
            notes.append(f"lifetime drops N={lo}->{hi}")
        if not tct_ok:
            notes.append(f"TCT rises N={lo}->{hi}")
    detail = "; ".join(f"N={n} LT {np.mean(lt[n]):.2f} TCT {np.mean(tct[n]):.4f}" for n in (1, 2, 3))
    detail += f" over {SWEEP_SEEDS} seeds" + (" | " + ", ".join(notes) if notes else "")
    assert report(7, "server-count trend", ok, detail, t0)


def test_criterion_8_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    outputs = []
    for run in ("a", "b"):
        base = tmp_path / run
        codes = [
            cli.main(["train", "--seed", "5", "--episodes", "20", "--out", str(base / "train")]),
            cli.main(["compare", "--seed", "5", "--episodes", "5", "--out", str(base / "compare"),
                      "--checkpoint", str(base / "train" / "checkpoints" / "final")]),
            cli.main(["compare", "--seed", "5", "--episodes", "5", "--no-dqn", "--fading", "off",
                      "--out", str(base / "baselines")]),
            cli.main(["sweep", "--seed", "5", "--servers", "1,2", "--episodes", "5",
                      "--out", str(base / "sweep")]),
        ]
        assert codes == [0, 0, 0, 0]
        outputs.append({p.relative_to(base).as_posix(): p.read_bytes()
                        for p in sorted(base.rglob("*.csv"))})
    same = outputs[0] == outputs[1] and len(outputs[0]) == 4
    detail = f"{len(outputs[0])} CSV files from train/compare/sweep, byte-identical: {same}"
    assert report(8, "CLI determinism", same, detail, t0)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", *sys.argv[1:]]))
