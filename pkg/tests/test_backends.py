import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mecoffload import _kernels_py, kernels

compiled = pytest.importorskip("mecoffload._kernels", reason="compiled kernels not built")

EPISODE_SCRIPT = """
import json
from mecoffload import kernels
from mecoffload.config import SimConfig
from mecoffload.sim import run_episode, to_record
states = []
for seed in range(5):
    _, env = run_episode(SimConfig(), seed, lambda env, obs: [r[-1].user_id for r in obs])
    states.append(to_record(env))
print(json.dumps({"backend": kernels.BACKEND, "states": states}))
"""


def physics_inputs(seed, k=7):
    rng = np.random.default_rng(seed)
    return dict(
        energy=rng.uniform(1e-7, 1.0, k), qlen=rng.integers(0, 40, k).astype(np.int64),
        selected=(rng.random(k) < 0.5).astype(np.uint8), gain=rng.uniform(1e-9, 1e-4, k),
        tau=0.1, f_cap=1e9, kappa=1e-27, cycles_per_bit=500.0, p_tx_max=0.5011872336272725,
        bandwidth=20e6 / 3, noise_psd=10 ** (-17.4) * 1e-3, task_bits=8000, standby=1e-7,
    )


def test_compiled_backend_is_selected():
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("seed", range(100))
def test_interval_physics_bit_identical(seed):
    a = compiled.interval_physics(**physics_inputs(seed))
    b = _kernels_py.interval_physics(**physics_inputs(seed))
    assert a.keys() == b.keys()
    for key in a:
        assert np.array_equal(a[key], b[key]), key


def test_scalar_kernels_bit_identical():
    for e in (0.0, 1e-9, 0.05, 0.9):
        assert compiled.max_feasible_power(e, 0.1) == _kernels_py.max_feasible_power(e, 0.1)
        p = _kernels_py.max_feasible_power(e, 0.1)
        assert (compiled.local_compute_budget(p, 1e9, 1e-27, 0.1, 500.0)
                == _kernels_py.local_compute_budget(p, 1e9, 1e-27, 0.1, 500.0))
    for d in (0.3, 1.0, 7.7):
        assert compiled.path_gain(d, 1e-3, 3.0) == _kernels_py.path_gain(d, 1e-3, 3.0)
    assert compiled.uplink_rate(2e7, 8e-6, 0.5, 4e-21) == _kernels_py.uplink_rate(2e7, 8e-6, 0.5, 4e-21)


def test_poisson_streams_identical():
    r1, r2 = np.random.default_rng(12), np.random.default_rng(12)
    a = compiled.poisson_batch(r1, 10.0, 1000)
    b = _kernels_py.poisson_batch(r2, 10.0, 1000)
    assert np.array_equal(a, b)
    assert r1.random() == r2.random()  # generators left in the same state


def test_whole_episodes_identical_across_backends():
    outs = []
    for pure in ("0", "1"):
        env = {**os.environ, "MECOFFLOAD_PURE_PYTHON": pure}
        res = subprocess.run([sys.executable, "-c", EPISODE_SCRIPT], env=env, check=True,
                             capture_output=True, text=True)
        outs.append(json.loads(res.stdout))
    assert [o["backend"] for o in outs] == ["cython", "python"]
    assert outs[0]["states"] == outs[1]["states"]
